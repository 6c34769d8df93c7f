"""
SINRs, achievable rates, fronthaul and power usage, objective and EE.

Precoders are stored stacked: row ``k`` of ``private``/``common`` is the
aggregate vector over all BSs (length ``B*L``, BS index major), with the
blocks of non-serving BSs held at zero. Rates are in Mbps, powers in watts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .netmodel import ChannelState, SystemConfig
from .structure import ClusterSets, DecodeStructure, RsmaStructure, residual_set


@dataclass(frozen=True)
class PrecoderSet:
    private: np.ndarray  # (K, B*L) complex
    common: np.ndarray  # (K, B*L) complex

    @classmethod
    def zeros(cls, num_users: int, dim: int) -> "PrecoderSet":
        return cls(np.zeros((num_users, dim), complex), np.zeros((num_users, dim), complex))

    def block(self, b: int, k: int, antennas: int, kind: str = "private") -> np.ndarray:
        w = self.private if kind == "private" else self.common
        return w[k, b * antennas:(b + 1) * antennas]

    def scaled(self, factor) -> "PrecoderSet":
        return PrecoderSet(self.private * factor, self.common * factor)

    def masked(self, clusters: ClusterSets, antennas: int) -> "PrecoderSet":
        K = self.private.shape[0]
        keep_p = np.repeat(clusters.mask(K, "private").T, antennas, axis=1)
        keep_c = np.repeat(clusters.mask(K, "common").T, antennas, axis=1)
        return PrecoderSet(np.where(keep_p, self.private, 0), np.where(keep_c, self.common, 0))

    def total_power(self) -> float:
        return float(np.sum(np.abs(self.private) ** 2) + np.sum(np.abs(self.common) ** 2))


@dataclass(frozen=True)
class RateAllocation:
    """Stream rates in Mbps.

    ``shares`` is only used by the single-common-message scheme: the
    super-common rate (held in ``common[carrier]``) is split across users.
    """

    private: np.ndarray
    common: np.ndarray
    shares: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, num_users: int, shared: bool = False) -> "RateAllocation":
        return cls(np.zeros(num_users), np.zeros(num_users), np.zeros(num_users) if shared else None)

    @property
    def total(self) -> np.ndarray:
        """Per-user total rate ``r_k``."""
        if self.shares is not None:
            return self.private + self.shares
        return self.private + self.common


def _cross_gains(w: PrecoderSet, channel: ChannelState):
    """|h_k^H w_j|^2 for private and common precoders, each (K, K) indexed [k, j]."""
    H = channel.stacked
    gp = np.abs(H.conj() @ w.private.T) ** 2
    gc = np.abs(H.conj() @ w.common.T) ** 2
    return gp, gc


def _private_denominator(k, gp, gc, decoded, noise):
    K = gp.shape[0]
    others = [j for j in range(K) if j != k]
    undecoded = [l for l in range(K) if l not in decoded]
    return gp[k, others].sum() + gc[k, undecoded].sum() + noise


def _common_denominator(i, k, gp, gc, decode, noise):
    K = gp.shape[0]
    # interference: commons never decoded at k plus those decoded after i
    later = residual_set(decode, i, k)
    decoded = set(decode.order[k])
    interferers = [l for l in range(K) if l not in decoded or l in later]
    return gp[k, :].sum() + gc[k, interferers].sum() + noise


def sinr_private(k: int, w: PrecoderSet, channel: ChannelState, decode: DecodeStructure, noise: float) -> float:
    gp, gc = _cross_gains(w, channel)
    return float(gp[k, k] / _private_denominator(k, gp, gc, set(decode.order[k]), noise))


def sinr_common(i: int, k: int, w: PrecoderSet, channel: ChannelState, decode: DecodeStructure,
                noise: float) -> float:
    """SINR of user ``i``'s common message when decoded at user ``k``."""
    if i not in decode.order[k]:
        raise ValueError(f"user {k} does not decode the common message of {i}")
    gp, gc = _cross_gains(w, channel)
    return float(gc[k, i] / _common_denominator(i, k, gp, gc, decode, noise))


def all_sinrs(w: PrecoderSet, channel: ChannelState, decode: DecodeStructure, noise: float):
    """Private SINRs (K,) and common SINRs (K, K) indexed [owner, decoder].

    Common entries for pairs that are not decoded are NaN.
    """
    gp, gc = _cross_gains(w, channel)
    K = gp.shape[0]
    priv = np.array([gp[k, k] / _private_denominator(k, gp, gc, set(decode.order[k]), noise)
                     for k in range(K)])
    comm = np.full((K, K), np.nan)
    for i, k in decode.pairs():
        comm[i, k] = gc[k, i] / _common_denominator(i, k, gp, gc, decode, noise)
    return priv, comm


@dataclass(frozen=True)
class RateBounds:
    private: np.ndarray  # (K,)
    common_pairs: np.ndarray  # (K, K) [owner, decoder], NaN where not decoded
    common: np.ndarray  # (K,) min over decoders, NaN for users without a common stream


def achievable_rates(w: PrecoderSet, channel: ChannelState, decode: DecodeStructure, noise: float,
                     bandwidth: float) -> RateBounds:
    """Shannon bounds; a common rate is limited by its weakest decoder."""
    priv, comm = all_sinrs(w, channel, decode, noise)
    pairs = bandwidth * np.log2(1.0 + comm)
    owners = ~np.all(np.isnan(pairs), axis=1)
    common = np.full(pairs.shape[0], np.nan)
    common[owners] = np.nanmin(pairs[owners], axis=1)
    return RateBounds(bandwidth * np.log2(1.0 + priv), pairs, common)


def fronthaul_usage(b: int, r: RateAllocation, clusters: ClusterSets) -> float:
    return float(sum(r.private[k] for k in clusters.private[b]) + sum(r.common[k] for k in clusters.common[b]))


def transmit_power(b: int, w: PrecoderSet, clusters: ClusterSets, antennas: int) -> float:
    sl = slice(b * antennas, (b + 1) * antennas)
    return float(sum(np.sum(np.abs(w.private[k, sl]) ** 2) for k in clusters.private[b])
                 + sum(np.sum(np.abs(w.common[k, sl]) ** 2) for k in clusters.common[b]))


def rate_mse(r: RateAllocation, desired) -> float:
    gap = r.total - np.asarray(desired, dtype=float)
    return float(np.mean(gap ** 2))


def objective_psi(w: PrecoderSet, r: RateAllocation, config: SystemConfig, *,
                  alpha: float | None = None, desired=None) -> float:
    """Weighted rate-gap MSE (Mbps^2) plus total transmit power (W).

    ``alpha`` and ``desired`` override the config values, which is how
    variants are scored against the true demands.
    """
    a = config.alpha if alpha is None else alpha
    d = config.desired_rates if desired is None else desired
    return a * rate_mse(r, d) + (1.0 - a) * w.total_power()


def energy_efficiency_phi(w: PrecoderSet, r: RateAllocation, config: SystemConfig) -> float:
    """Sum rate over transmit plus circuit power, in Mbps/W."""
    return float(np.sum(r.total)) / (w.total_power() + config.circuit_power)


@dataclass(frozen=True)
class FeasibilityReport:
    """Worst signed slack per constraint family, relative to its scale.

    Scales: fronthaul capacity, power budget and bandwidth (for both rate
    families). A negative entry is a violation.
    """

    fronthaul: float
    power: float
    private_rate: float
    common_rate: float
    tol: float

    @property
    def worst(self) -> float:
        return min(self.fronthaul, self.power, self.private_rate, self.common_rate)

    @property
    def feasible(self) -> bool:
        return self.worst >= -self.tol


def check_feasibility(w: PrecoderSet, r: RateAllocation, channel: ChannelState, structure: RsmaStructure,
                      config: SystemConfig, noise: float, tol: float = 1e-6) -> FeasibilityReport:
    if tol < 0:
        raise ValueError("tol must be >= 0")
    clusters = structure.clusters
    L = channel.antennas
    front = min((config.fronthaul_capacity - fronthaul_usage(b, r, clusters)) / config.fronthaul_capacity
                for b in range(channel.num_bs))
    power = min((config.max_power - transmit_power(b, w, clusters, L)) / config.max_power
                for b in range(channel.num_bs))
    bounds = achievable_rates(w, channel, structure.decode, noise, config.bandwidth)
    tau = config.bandwidth
    priv = float(np.min(np.minimum(bounds.private - r.private, r.private))) / tau
    common_slack = [r.common.min()]
    if r.shares is not None:
        common_slack.append(r.shares.min())
        # the super-common rate equals the sum of the shares
        common_slack.append(-abs(r.common[structure.carrier] - r.shares.sum()))
    for i, k in structure.decode.pairs():
        common_slack.append(bounds.common_pairs[i, k] - r.common[i])
    owners = set(i for i, _ in structure.decode.pairs())
    common_slack.extend(-abs(r.common[i]) for i in range(len(r.common)) if i not in owners)
    return FeasibilityReport(float(front), float(power), priv, float(min(common_slack)) / tau, tol)


def qt_private(k: int, u: complex, gamma: float, w: PrecoderSet, channel: ChannelState,
               decode: DecodeStructure, noise: float) -> float:
    """Quadratic-transform surrogate ``g^p`` evaluated directly."""
    h = channel.aggregate(k)
    gp, gc = _cross_gains(w, channel)
    interference = _private_denominator(k, gp, gc, set(decode.order[k]), noise)
    return float(gamma - 2.0 * np.real(np.conj(u) * np.vdot(w.private[k], h)) + abs(u) ** 2 * interference)


def qt_common(i: int, k: int, u: complex, gamma: float, w: PrecoderSet, channel: ChannelState,
              decode: DecodeStructure, noise: float) -> float:
    """Quadratic-transform surrogate ``g^c`` for message ``i`` at user ``k``."""
    h = channel.aggregate(k)
    gp, gc = _cross_gains(w, channel)
    interference = _common_denominator(i, k, gp, gc, decode, noise)
    return float(gamma - 2.0 * np.real(np.conj(u) * np.vdot(w.common[i], h)) + abs(u) ** 2 * interference)
