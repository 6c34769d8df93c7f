"""
Iterative quadratic-transform resource allocation.

Each outer iteration fixes the auxiliaries at their closed-form optimum for
the current precoders and solves the resulting convex subproblem. Because
the previous iterate stays feasible for the next subproblem, the objective
never increases.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import conic
from .metrics import (FeasibilityReport, PrecoderSet, RateAllocation, _common_denominator, _cross_gains,
                      _private_denominator, all_sinrs, check_feasibility, objective_psi, rate_mse)
from .netmodel import ChannelState, SystemConfig
from .structure import RsmaStructure, without_common

logger = logging.getLogger(__name__)

INIT_MODES = ("mrt-demand", "mrt", "random")


class InitializationError(RuntimeError):
    """The first subproblem was infeasible, so the starting point was not feasible."""


@dataclass(frozen=True)
class AuxVariables:
    private: np.ndarray  # (K,) complex
    common: np.ndarray  # (K, K) complex, [owner, decoder]; zero for undecoded pairs


@dataclass(frozen=True)
class QTOptions:
    tol: float = 1e-4
    max_iter: int = 50
    # common streams whose power falls below this fraction of the BS budget are dropped
    prune_ratio: float = 1e-6
    init: str = "mrt-demand"
    init_seed: int = 0
    solver: conic.SolverSettings = field(default_factory=conic.SolverSettings)


@dataclass
class IterateRecord:
    iteration: int
    psi: float
    mse: float
    power: float
    status: str
    wall_time: float


@dataclass
class Solution:
    precoders: PrecoderSet
    rates: RateAllocation
    gamma_private: np.ndarray
    gamma_common: np.ndarray
    log: list[IterateRecord]
    feasibility: Optional[FeasibilityReport] = None
    degraded: bool = False
    converged: bool = False

    @property
    def iterations(self) -> int:
        """Number of subproblems solved."""
        return sum(1 for rec in self.log if rec.iteration > 0)

    @property
    def psi(self) -> float:
        return self.log[-1].psi

    def log_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "psi", "mse", "power_w", "status"])
        for rec in self.log:
            writer.writerow([rec.iteration, repr(rec.psi), repr(rec.mse), repr(rec.power), rec.status])
        return buf.getvalue()


def _stream_list(structure: RsmaStructure, b: int):
    """(kind, owner) pairs carried by BS ``b``, privates first."""
    owners = set(structure.common_owners)
    streams = [("private", k) for k in sorted(structure.clusters.private[b])]
    streams += [("common", k) for k in sorted(structure.clusters.common[b]) if k in owners]
    return streams


def _stream_target(channel: ChannelState, structure: RsmaStructure, config: SystemConfig, noise: float,
                   kind: str, k: int, bss) -> float:
    """Transmit power that would deliver the demand of stream ``(kind, k)`` without interference."""
    d = np.asarray(config.desired_rates, dtype=float)
    if kind == "common" and structure.shared_common:
        users = sorted(structure.decode.decoders[k])
        demand = float(np.mean(d))
        gain = min(float(np.sum(np.abs(channel.h[bss, j]) ** 2)) for j in users)
    else:
        demand = float(d[k])
        gain = float(np.sum(np.abs(channel.h[bss, k]) ** 2))
    snr = 2.0 ** (max(demand, 0.0) / config.bandwidth) - 1.0
    return snr * noise / max(gain, 1e-300)


def init_precoders(channel: ChannelState, structure: RsmaStructure, config: SystemConfig,
                   mode: str = "mrt-demand", rng: np.random.Generator | None = None,
                   noise: float | None = None) -> PrecoderSet:
    """Feasible starting precoders.

    ``mrt`` points each stream at its owner's channel (the shared
    super-common stream at the sum of its decoders' unit channels) and
    splits every BS's full budget evenly across the streams it carries;
    ``random`` draws complex Gaussian directions with the same split.
    ``mrt-demand`` keeps the MRT directions but gives each stream the power
    that would meet its demand in the absence of interference, with every
    BS scaled back onto its budget if needed.

    Starting far above the eventual power level slows the descent: the
    surrogate bounds how fast a stream's amplitude can shrink per iteration.
    """
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")
    if mode == "mrt-demand" and noise is None:
        raise ValueError("mode 'mrt-demand' needs the noise power")
    if mode == "random" and rng is None:
        rng = np.random.default_rng(0)
    K, B, L = channel.num_users, channel.num_bs, channel.antennas
    w = PrecoderSet.zeros(K, B * L)
    if mode == "mrt-demand":
        for kind, k in [("private", k) for k in range(K)] + [("common", k) for k in structure.common_owners]:
            bss = list(structure.clusters.serving(k, kind))
            if not bss:
                continue
            if kind == "common" and structure.shared_common:
                v = np.concatenate([_unit_sum(channel, b, structure.decode.decoders[k]) for b in bss])
            else:
                v = channel.h[bss, k].reshape(-1)
            nv = np.linalg.norm(v)
            if nv == 0:
                v, nv = np.ones(v.size, dtype=complex), np.sqrt(v.size)
            amp = np.sqrt(_stream_target(channel, structure, config, noise, kind, k, bss))
            target = w.private if kind == "private" else w.common
            for n, b in enumerate(bss):
                target[k, b * L:(b + 1) * L] = amp * v[n * L:(n + 1) * L] / nv
        for b in range(B):
            sl = slice(b * L, (b + 1) * L)
            load = np.sum(np.abs(w.private[:, sl]) ** 2) + np.sum(np.abs(w.common[:, sl]) ** 2)
            if load > config.max_power:
                scale = np.sqrt(config.max_power / load)
                w.private[:, sl] *= scale
                w.common[:, sl] *= scale
        return w

    for b in range(B):
        streams = _stream_list(structure, b)
        if not streams:
            continue
        amp = np.sqrt(config.max_power / len(streams))
        for kind, k in streams:
            if mode == "random":
                v = rng.standard_normal(L) + 1j * rng.standard_normal(L)
            elif kind == "common" and structure.shared_common:
                v = _unit_sum(channel, b, structure.decode.decoders[k])
            else:
                v = channel.h[b, k]
            nv = np.linalg.norm(v)
            if nv == 0:
                v, nv = np.ones(L, dtype=complex), np.sqrt(L)
            target = w.private if kind == "private" else w.common
            target[k, b * L:(b + 1) * L] = amp * v / nv
    return w


def _unit_sum(channel: ChannelState, b: int, users) -> np.ndarray:
    return sum(channel.h[b, j] / max(np.linalg.norm(channel.h[b, j]), 1e-300) for j in sorted(users))


def update_aux(w: PrecoderSet, channel: ChannelState, structure: RsmaStructure, noise: float) -> AuxVariables:
    """Closed-form optimal auxiliaries for fixed precoders."""
    K = channel.num_users
    H = channel.stacked
    gp, gc = _cross_gains(w, channel)
    decode = structure.decode
    up = np.zeros(K, dtype=complex)
    for k in range(K):
        up[k] = np.vdot(w.private[k], H[k]) / _private_denominator(k, gp, gc, set(decode.order[k]), noise)
    uc = np.zeros((K, K), dtype=complex)
    for i, k in decode.pairs():
        uc[i, k] = np.vdot(w.common[i], H[k]) / _common_denominator(i, k, gp, gc, decode, noise)
    return AuxVariables(up, uc)


def _sanitize(rates: RateAllocation, shared: bool = False) -> RateAllocation:
    # interior-point output can sit a hair below zero
    if rates.shares is not None:
        shares = np.maximum(rates.shares, 0.0)
    else:
        shares = np.zeros_like(rates.private) if shared else None
    return RateAllocation(np.maximum(rates.private, 0.0), np.maximum(rates.common, 0.0), shares)


def _prune(w: PrecoderSet, r: RateAllocation, structure: RsmaStructure, threshold: float,
           config: SystemConfig):
    """Zero out common streams with negligible power and drop them from ``structure``.

    A stream at zero power has a zero auxiliary and can never be revived by
    later iterations; keeping it only degrades the conditioning. A stream is
    only dropped when losing its rate does not raise the objective, so the
    outer loop stays monotone.
    """
    power = np.sum(np.abs(w.common) ** 2, axis=1)
    candidates = [i for i in structure.common_owners if power[i] <= threshold]
    dead = []
    psi = objective_psi(w, r, config)
    for i in candidates:
        wc = w.common.copy()
        rc = r.common.copy()
        wc[i] = 0.0
        rc[i] = 0.0
        shares = r.shares
        if structure.shared_common and structure.carrier == i:
            shares = np.zeros_like(r.shares)
        w_try, r_try = PrecoderSet(w.private, wc), RateAllocation(r.private, rc, shares)
        psi_try = objective_psi(w_try, r_try, config)
        if psi_try <= psi:
            w, r, psi = w_try, r_try, psi_try
            dead.append(i)
    if not dead:
        return w, r, structure
    logger.debug("dropping common streams %s", dead)
    return w, r, without_common(structure, dead)


def _record(it, w, r, config, status, t0, alpha=None, desired=None) -> IterateRecord:
    a = config.alpha if alpha is None else alpha
    d = config.desired_rates if desired is None else desired
    return IterateRecord(it, objective_psi(w, r, config, alpha=a, desired=d), rate_mse(r, d),
                         w.total_power(), status, time.perf_counter() - t0)


def qt_step(w: PrecoderSet, channel: ChannelState, structure: RsmaStructure, config: SystemConfig,
            noise: float, settings: conic.SolverSettings | None = None) -> conic.SolverResult:
    """One auxiliary update followed by one subproblem solve."""
    aux = update_aux(w, channel, structure, noise)
    program = conic.build_subproblem(channel, structure, aux, config, noise)
    return conic.solve(program, settings)


def run(config: SystemConfig, channel: ChannelState, structure: RsmaStructure, noise: float,
        opts: QTOptions | None = None, *, initial: PrecoderSet | None = None) -> Solution:
    """Alternate auxiliary updates and conic solves until the objective settles.

    Stops when ``|psi_t - psi_{t-1}| <= tol * max(1, |psi_{t-1}|)`` or after
    ``max_iter`` subproblems. A solver failure after the first iteration
    returns the previous iterate flagged as degraded.
    """
    opts = opts or QTOptions()
    t0 = time.perf_counter()
    if initial is None:
        rng = np.random.default_rng(opts.init_seed) if opts.init == "random" else None
        initial = init_precoders(channel, structure, config, opts.init, rng, noise)
    w = initial
    r = RateAllocation.zeros(channel.num_users, structure.shared_common)
    log = [_record(0, w, r, config, "init", t0)]
    degraded = converged = False
    active = structure

    for it in range(1, opts.max_iter + 1):
        res = qt_step(w, channel, active, config, noise, opts.solver)
        if not res.ok or res.precoders is None:
            if it == 1 and res.status == "infeasible":
                raise InitializationError("first subproblem infeasible: starting point violates the constraints")
            logger.warning("subproblem %d ended with %s (%s); keeping previous iterate", it, res.status,
                           res.raw_status)
            log.append(IterateRecord(it, log[-1].psi, log[-1].mse, log[-1].power, res.status,
                                     time.perf_counter() - t0))
            degraded = True
            break
        w_new, r_new = res.precoders, _sanitize(res.rates, structure.shared_common)
        w_new, r_new, active = _prune(w_new, r_new, active, opts.prune_ratio * config.max_power, config)
        rec = _record(it, w_new, r_new, config, res.status, t0)
        prev = log[-1].psi
        log.append(rec)
        w, r = w_new, r_new
        if abs(rec.psi - prev) <= opts.tol * max(1.0, abs(prev)):
            converged = True
            break

    priv, comm = all_sinrs(w, channel, structure.decode, noise)
    sol = Solution(w, r, priv, comm, log, degraded=degraded, converged=converged)
    sol.feasibility = check_feasibility(w, r, channel, structure, config, noise)
    return sol


@dataclass(frozen=True)
class StationarityReport:
    psi_change: float
    sinr_mismatch: float
    rate_excess: float
    tol: float

    @property
    def fixed_point(self) -> bool:
        return self.psi_change <= self.tol

    @property
    def tight(self) -> bool:
        return self.sinr_mismatch <= self.tol and self.rate_excess <= self.tol

    @property
    def passed(self) -> bool:
        return self.fixed_point and self.tight


def stationarity_check(solution: Solution, channel: ChannelState, structure: RsmaStructure,
                       config: SystemConfig, noise: float, tol: float = 1e-3,
                       settings: conic.SolverSettings | None = None) -> StationarityReport:
    """Fixed-point test of a returned solution.

    (a) one more auxiliary update plus subproblem solve must leave the
    objective unchanged (relative to ``max(1, |psi|)``); (b) the stored SINR
    auxiliaries must equal the true SINRs of the precoders and certify every
    rate.
    """
    w, r = solution.precoders, solution.rates
    psi = objective_psi(w, r, config)
    res = qt_step(w, channel, structure, config, noise, settings)
    if res.ok:
        psi_next = objective_psi(res.precoders, _sanitize(res.rates, structure.shared_common), config)
        change = abs(psi_next - psi) / max(1.0, abs(psi))
    else:
        change = float("inf")

    priv, comm = all_sinrs(w, channel, structure.decode, noise)
    scale = np.maximum(1.0, np.abs(priv))
    mismatch = float(np.max(np.abs(solution.gamma_private - priv) / scale))
    mask = ~np.isnan(comm)
    if mask.any():
        scale_c = np.maximum(1.0, np.abs(comm[mask]))
        mismatch = max(mismatch, float(np.max(np.abs(solution.gamma_common[mask] - comm[mask]) / scale_c)))
    tau = config.bandwidth
    excess = float(np.max(r.private - tau * np.log2(1.0 + np.maximum(solution.gamma_private, 0.0))))
    for i, k in structure.decode.pairs():
        bound = tau * np.log2(1.0 + max(solution.gamma_common[i, k], 0.0))
        excess = max(excess, float(r.common[i] - bound))
    return StationarityReport(change, mismatch, max(excess / tau, 0.0), tol)
