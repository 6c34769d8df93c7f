"""
Scenario configuration, random node placement and channel generation.

Units at the boundary follow the usual link-budget habits (dBm, Mbps, MHz,
dBm/Hz); everything stored internally is linear: watts for power, Mbps for
rates and MHz for the bandwidth, so that ``tau * log2(1 + sinr)`` is in Mbps.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

LEVELS = ("HI", "ME", "LO")
DEFAULT_RATE_LEVELS = {"HI": 14.0, "ME": 7.0, "LO": 3.0}

# Stream indices for SeedSequence.spawn; keep stable so stages don't perturb each other.
_STAGE_PLACEMENT = 0
_STAGE_SHADOWING = 1
_STAGE_FADING = 2


class ConfigError(ValueError):
    """Raised for an invalid scenario configuration."""


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


def default_criticality(num_users: int) -> tuple[str, ...]:
    """Split users into HI/ME/LO in the 4:6:6 proportion, HI first.

    Users are placed i.i.d., so assigning levels by index is statistically
    the same as picking random users for each level.
    """
    n_hi = int(round(num_users * 4 / 16))
    n_me = int(round(num_users * 6 / 16))
    n_hi = min(n_hi, num_users)
    n_me = min(n_me, num_users - n_hi)
    n_lo = num_users - n_hi - n_me
    return ("HI",) * n_hi + ("ME",) * n_me + ("LO",) * n_lo


@dataclass(frozen=True)
class SystemConfig:
    """All scenario parameters for one C-RAN instance.

    Powers are given in dBm and converted on access (``max_power``,
    ``circuit_power``). ``desired_rates`` defaults to the per-level values in
    ``rate_levels`` when left empty.
    """

    num_bs: int = 4
    num_users: int = 6
    antennas_per_bs: int = 2
    fronthaul_capacity: float = 28.0  # Mbps per BS
    max_power_dbm: float = 28.0
    bandwidth: float = 10.0  # MHz
    noise_psd: float = -168.0  # dBm/Hz
    area_side: float = 800.0  # m
    alpha: float = 0.5
    criticality_levels: tuple[str, ...] = ()
    rate_levels: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_RATE_LEVELS))
    desired_rates: tuple[float, ...] = ()
    circuit_power_dbm: float = 38.0
    seed: int = 0
    shadowing_std_db: float = 8.0
    min_distance: float = 10.0  # m
    private_cluster_size: int = 2
    common_cluster_size: int = 2
    decode_set_size: int = 2

    def __post_init__(self):
        levels = tuple(self.criticality_levels) or default_criticality(self.num_users)
        object.__setattr__(self, "criticality_levels", levels)
        object.__setattr__(self, "rate_levels", dict(self.rate_levels))
        if self.desired_rates:
            rates = tuple(float(r) for r in self.desired_rates)
        else:
            rates = tuple(float(self.rate_levels[lvl]) for lvl in levels)
        object.__setattr__(self, "desired_rates", rates)
        validate_config(self)

    @property
    def max_power(self) -> float:
        """Per-BS power budget in watts."""
        return float(dbm_to_watt(self.max_power_dbm))

    @property
    def circuit_power(self) -> float:
        return float(dbm_to_watt(self.circuit_power_dbm))

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["criticality_levels"] = list(self.criticality_levels)
        out["desired_rates"] = list(self.desired_rates)
        out["rate_levels"] = dict(self.rate_levels)
        return out


def validate_config(config: SystemConfig) -> None:
    if min(config.num_bs, config.num_users, config.antennas_per_bs) < 1:
        raise ConfigError("num_bs, num_users and antennas_per_bs must be >= 1")
    if not 0.0 <= config.alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {config.alpha}")
    for name in ("fronthaul_capacity", "bandwidth", "area_side"):
        if not getattr(config, name) > 0:
            raise ConfigError(f"{name} must be strictly positive")
    for name in ("max_power_dbm", "circuit_power_dbm", "noise_psd"):
        if not math.isfinite(getattr(config, name)):
            raise ConfigError(f"{name} must be finite")
    if config.shadowing_std_db < 0 or config.min_distance < 0:
        raise ConfigError("shadowing_std_db and min_distance must be >= 0")
    if len(config.criticality_levels) != config.num_users:
        raise ConfigError("criticality_levels needs one entry per user")
    if len(config.desired_rates) != config.num_users:
        raise ConfigError("desired_rates needs one entry per user")
    bad = set(config.criticality_levels) - set(LEVELS)
    if bad:
        raise ConfigError(f"unknown criticality levels {sorted(bad)}")
    if any(r < 0 for r in config.desired_rates):
        raise ConfigError("desired rates must be non-negative")
    # HI demands must dominate ME demands, which dominate LO demands.
    by_level = {lvl: [r for r, l in zip(config.desired_rates, config.criticality_levels) if l == lvl]
                for lvl in LEVELS}
    for upper, lower in (("HI", "ME"), ("ME", "LO"), ("HI", "LO")):
        if by_level[upper] and by_level[lower] and min(by_level[upper]) < max(by_level[lower]):
            raise ConfigError(f"desired rates of {upper} users must be >= those of {lower} users")
    for name in ("private_cluster_size", "common_cluster_size"):
        size = getattr(config, name)
        if not 1 <= size <= config.num_bs:
            raise ConfigError(f"{name} must lie in [1, num_bs]")
    if config.decode_set_size < 0:
        raise ConfigError("decode_set_size must be >= 0")


def desk_config(**overrides) -> SystemConfig:
    """Desk-scale preset: 4 BSs, 6 users, 2 antennas."""
    return SystemConfig(**overrides)


def full_config(**overrides) -> SystemConfig:
    """Full-scale preset with 10 BSs and 16 users."""
    params = dict(num_bs=10, num_users=16)
    params.update(overrides)
    return SystemConfig(**params)


PRESETS = {"default": desk_config, "desk": desk_config, "full": full_config}


def config_from_dict(data: Mapping[str, Any]) -> SystemConfig:
    """Build a config from a (possibly nested) mapping.

    A top-level ``preset`` key selects the base preset; nested sections
    (``network``, ``radio``, ``qos``, ``structure``...) are flattened so the
    file can be organised freely as long as leaf keys match field names.
    """
    flat: dict[str, Any] = {}

    def _walk(node: Mapping[str, Any]):
        for key, value in node.items():
            if isinstance(value, Mapping) and key != "rate_levels":
                _walk(value)
            else:
                flat[key] = value

    _walk(data)
    preset = flat.pop("preset", "default")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    known = {f.name for f in dataclasses.fields(SystemConfig)}
    unknown = set(flat) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("criticality_levels", "desired_rates"):
        if key in flat:
            flat[key] = tuple(flat[key])
    try:
        return PRESETS[preset](**flat)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(source: str | Path) -> SystemConfig:
    """Load a YAML config file, or a preset name (``default``, ``desk``, ``full``)."""
    if str(source) in PRESETS:
        return PRESETS[str(source)]()
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"config file not found: {source}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError("config file must contain a mapping")
    return config_from_dict(data)


def stage_rng(seed: int, stage: int) -> np.random.Generator:
    """Independent generator for one stochastic stage of a scenario."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[stage])


@dataclass(frozen=True)
class Topology:
    bs_positions: np.ndarray  # (B, 2)
    user_positions: np.ndarray  # (K, 2)
    distances: np.ndarray  # (B, K)


def place_nodes(config: SystemConfig, rng: np.random.Generator | None = None) -> Topology:
    """Drop BSs and users uniformly at random over the square area."""
    if rng is None:
        rng = stage_rng(config.seed, _STAGE_PLACEMENT)
    side = config.area_side
    bs = rng.uniform(0.0, side, size=(config.num_bs, 2))
    users = rng.uniform(0.0, side, size=(config.num_users, 2))
    dist = np.linalg.norm(bs[:, None, :] - users[None, :, :], axis=-1)
    for arr in (bs, users, dist):
        arr.setflags(write=False)
    return Topology(bs, users, dist)


def path_loss_db(distance):
    """Macro-cell path loss ``128.1 + 37.6 log10(d)`` with ``d`` in km.

    ``distance`` is in meters; scalars and arrays are accepted.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("path loss requires strictly positive distances")
    out = 128.1 + 37.6 * np.log10(d / 1000.0)
    return float(out) if out.ndim == 0 else out


def noise_power(config: SystemConfig) -> float:
    """Receiver noise power in watts over the configured bandwidth."""
    if not config.bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    dbm = config.noise_psd + 10.0 * math.log10(config.bandwidth * 1e6)
    return float(dbm_to_watt(dbm))


@dataclass(frozen=True)
class ChannelState:
    """Channel vectors ``h[b, k]`` (length L) for every BS-user pair."""

    h: np.ndarray  # (B, K, L) complex

    @property
    def num_bs(self) -> int:
        return self.h.shape[0]

    @property
    def num_users(self) -> int:
        return self.h.shape[1]

    @property
    def antennas(self) -> int:
        return self.h.shape[2]

    def aggregate(self, k: int) -> np.ndarray:
        """Stacked channel of user ``k`` over all BSs, BS index major."""
        return self.h[:, k, :].reshape(-1)

    @property
    def stacked(self) -> np.ndarray:
        """(K, B*L) matrix whose row ``k`` is the aggregate channel of user ``k``."""
        return np.transpose(self.h, (1, 0, 2)).reshape(self.num_users, -1)

    def link_norms(self) -> np.ndarray:
        """(B, K) matrix of per-link channel norms."""
        return np.linalg.norm(self.h, axis=-1)

    def scaled(self, factor: float) -> "ChannelState":
        return ChannelState(self.h * factor)


def draw_channel(
    config: SystemConfig,
    topology: Topology,
    rng: np.random.Generator | None = None,
    *,
    fading: str = "rayleigh",
) -> ChannelState:
    """Path loss + per-link log-normal shadowing + Rayleigh fading.

    ``rng`` may be given to override both stochastic stages with one stream;
    by default the shadowing and fading draws come from separate sub-streams
    of ``config.seed``. ``fading="ones"`` replaces the small-scale fading with
    all-ones (test hook).
    """
    B, K, L = config.num_bs, config.num_users, config.antennas_per_bs
    if topology.distances.shape != (B, K):
        raise ValueError("topology does not match the configuration")
    shadow_rng = rng if rng is not None else stage_rng(config.seed, _STAGE_SHADOWING)
    fading_rng = rng if rng is not None else stage_rng(config.seed, _STAGE_FADING)

    dist = np.maximum(topology.distances, config.min_distance)
    loss_db = path_loss_db(dist)
    shadow_db = shadow_rng.normal(0.0, 1.0, size=(B, K)) * config.shadowing_std_db
    amplitude = 10.0 ** (-(loss_db + shadow_db) / 20.0)

    if fading == "rayleigh":
        g = (fading_rng.standard_normal((B, K, L)) + 1j * fading_rng.standard_normal((B, K, L))) / math.sqrt(2.0)
    elif fading == "ones":
        g = np.ones((B, K, L), dtype=complex)
    else:
        raise ValueError(f"unknown fading model {fading!r}")
    h = amplitude[:, :, None] * g
    h.setflags(write=False)
    return ChannelState(h)


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    topology: Topology
    channel: ChannelState

    @property
    def noise_power(self) -> float:
        return noise_power(self.config)


def make_scenario(config: SystemConfig, seed: int | None = None) -> Scenario:
    """Place nodes and draw channels; a pure function of ``(config, seed)``."""
    if seed is not None and seed != config.seed:
        config = config.replace(seed=seed)
    topo = place_nodes(config)
    return Scenario(config, topo, draw_channel(config, topo))
