"""
Experiment sweeps, criticality variants, a brute-force oracle and CSV output.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import qt
from .baselines import SCHEMES, build_structure
from .metrics import energy_efficiency_phi, objective_psi, rate_mse
from .netmodel import LEVELS, ChannelState, SystemConfig, make_scenario

PARAMETERS = ("fronthaul", "snr", "target-rates", "alpha")
VARIANTS = ("Mixed", "NoMixLO", "NoMixME", "NoMixHI", "NoCrit")
CSV_COLUMNS = ("parameter", "value", "variant", "seed", "scheme", "status", "iterations", "psi", "mse",
               "power_w", "phi", "sum_rate", "sum_target", "rates")
CSV_VERSION = 1


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    schemes: tuple[str, ...] = SCHEMES
    variant: str = "Mixed"
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}; expected one of {PARAMETERS}")
        if not self.values or not self.seeds or not self.schemes:
            raise ValueError("sweep needs at least one grid value, seed and scheme")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        bad = set(self.schemes) - set(SCHEMES)
        if bad:
            raise ValueError(f"unknown schemes {sorted(bad)}")


@dataclass
class ResultRow:
    parameter: str
    value: float
    variant: str
    seed: int
    scheme: str
    status: str
    iterations: int
    psi: float
    mse: float
    power_w: float
    phi: float
    sum_rate: float
    sum_target: float
    rates: tuple[float, ...] = ()
    wall_time: float = field(default=0.0, compare=False)


def target_rate_levels(lo: float) -> dict[str, float]:
    """Demand schedule of the target-rate sweep: ME twice and HI four times LO."""
    return {"LO": float(lo), "ME": 2.0 * lo, "HI": 4.0 * lo}


def apply_point(config: SystemConfig, parameter: str, value: float) -> SystemConfig:
    """Config at one grid point.

    ``snr`` is the per-BS budget over the noise power in dB, reached by
    moving the noise PSD; ``target-rates`` takes the LO demand in Mbps.
    """
    if parameter == "fronthaul":
        return config.replace(fronthaul_capacity=float(value))
    if parameter == "alpha":
        return config.replace(alpha=float(value))
    if parameter == "snr":
        psd = config.max_power_dbm - float(value) - 10.0 * math.log10(config.bandwidth * 1e6)
        return config.replace(noise_psd=psd)
    if parameter == "target-rates":
        return config.replace(rate_levels=target_rate_levels(value), desired_rates=())
    raise ValueError(f"unknown sweep parameter {parameter!r}")


def apply_criticality_variant(variant: str, config: SystemConfig) -> SystemConfig:
    """Config the optimizer sees under a criticality variant.

    Scoring always uses the original config (true demands and weight).
    """
    if variant == "Mixed":
        return config
    if variant == "NoCrit":
        return config.replace(alpha=0.0)
    if variant.startswith("NoMix") and variant[5:] in LEVELS:
        level = config.rate_levels[variant[5:]]
        return config.replace(desired_rates=(float(level),) * config.num_users)
    raise ValueError(f"unknown variant {variant!r}")


def run_scheme(config: SystemConfig, scheme: str, seed: int, variant: str = "Mixed",
               opts: qt.QTOptions | None = None):
    """Scenario -> structure -> optimizer for one (config, scheme, seed)."""
    scenario = make_scenario(config, seed)
    structure = build_structure(scheme, scenario.channel, config)
    opt_config = apply_criticality_variant(variant, scenario.config)
    sol = qt.run(opt_config, scenario.channel, structure, scenario.noise_power, opts)
    return scenario, structure, sol


def _run_task(task) -> ResultRow:
    spec_param, value, variant, seed, scheme, config, opts = task
    point = apply_point(config, spec_param, value)
    t0 = time.perf_counter()
    try:
        scenario, _, sol = run_scheme(point, scheme, seed, variant, opts)
    except Exception as exc:  # recorded in the row; the sweep goes on
        nan = float("nan")
        return ResultRow(spec_param, float(value), variant, seed, scheme, f"error:{type(exc).__name__}", 0,
                         nan, nan, nan, nan, nan, float(sum(point.desired_rates)), (),
                         time.perf_counter() - t0)
    true = scenario.config
    w, r = sol.precoders, sol.rates
    status = "degraded" if sol.degraded else ("converged" if sol.converged else "max-iter")
    return ResultRow(spec_param, float(value), variant, seed, scheme, status, sol.iterations,
                     objective_psi(w, r, true), rate_mse(r, true.desired_rates), w.total_power(),
                     energy_efficiency_phi(w, r, true), float(np.sum(r.total)), float(sum(true.desired_rates)),
                     tuple(float(x) for x in r.total), time.perf_counter() - t0)


def sweep(spec: SweepSpec, config: SystemConfig, *, opts: qt.QTOptions | None = None,
          n_jobs: int = 1) -> list[ResultRow]:
    """One row per (grid value, seed, scheme), in that nesting order."""
    tasks = [(spec.parameter, v, spec.variant, s, sch, config, opts)
             for v in spec.values for s in spec.seeds for sch in spec.schemes]
    if n_jobs == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_task, tasks))


def rows_to_csv(rows: Iterable[ResultRow], *, timing: bool = False) -> str:
    """CSV text; wall time is left out unless ``timing`` so reruns are byte-identical."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = list(CSV_COLUMNS) + (["wall_time"] if timing else [])
    writer.writerow(cols)
    for row in rows:
        rec = asdict(row)
        rec["rates"] = ";".join(repr(x) for x in row.rates)
        writer.writerow([rec[c] for c in cols])
    return buf.getvalue()


def write_csv(rows: Iterable[ResultRow], path: str | Path, *, timing: bool = False) -> None:
    Path(path).write_text(rows_to_csv(rows, timing=timing))


class EmptyInputError(ValueError):
    pass


PLOT_METRICS = ("psi", "mse", "power_w", "phi", "iterations")


def plotdata(csv_text: str) -> list[dict]:
    """Mean and population std over seeds per (parameter, value, variant, scheme)."""
    reader = csv.DictReader(io.StringIO(csv_text))
    groups: dict[tuple, list[dict]] = {}
    for rec in reader:
        key = (rec["parameter"], float(rec["value"]), rec["variant"], rec["scheme"])
        groups.setdefault(key, []).append(rec)
    if not groups:
        raise EmptyInputError("no result rows to aggregate")
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[2], k[3], k[1])):
        recs = groups[key]
        entry = dict(zip(("parameter", "value", "variant", "scheme"), key))
        entry["count"] = len(recs)
        for m in PLOT_METRICS:
            vals = np.array([float(r[m]) for r in recs])
            entry[f"{m}_mean"] = float(np.mean(vals))
            entry[f"{m}_std"] = float(np.std(vals))
        out.append(entry)
    return out


def plotdata_csv(series: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(series[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(series)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# brute-force oracle for tiny single-antenna TIN instances


class OracleRefusal(ValueError):
    """The instance is outside what the grid oracle can enumerate."""


@dataclass
class OracleResult:
    psi: float
    powers: np.ndarray  # per-user private power (W)
    rates: np.ndarray  # per-user rate (Mbps)
    grid_points: int


def _project_rates(desired: np.ndarray, caps: np.ndarray, capacity: float) -> np.ndarray:
    """Exact minimiser of sum (r - d)^2 over 0 <= r <= caps, sum r <= capacity.

    Row-wise over a batch: ``r = clip(d - lam, 0, caps)`` with the smallest
    ``lam >= 0`` meeting the capacity; the total is piecewise linear in
    ``lam``, so it is located between breakpoints and interpolated exactly.
    """
    d = np.broadcast_to(desired, caps.shape)
    total0 = np.clip(d, 0.0, caps).sum(axis=1)
    lam = np.zeros(caps.shape[0])
    need = total0 > capacity
    if np.any(need):
        dn, cn = d[need], caps[need]
        bps = np.sort(np.concatenate([np.zeros((dn.shape[0], 1)), dn - cn, dn], axis=1), axis=1)
        bps = np.maximum(bps, 0.0)
        tot = np.clip(dn[:, None, :] - bps[:, :, None], 0.0, cn[:, None, :]).sum(axis=2)
        j = np.argmax(tot <= capacity, axis=1)  # first breakpoint where the cap is met
        lo, hi = bps[np.arange(len(j)), j - 1], bps[np.arange(len(j)), j]
        tlo, thi = tot[np.arange(len(j)), j - 1], tot[np.arange(len(j)), j]
        frac = np.where(tlo > thi, (tlo - capacity) / np.where(tlo > thi, tlo - thi, 1.0), 0.0)
        lam[need] = lo + frac * (hi - lo)
    return np.clip(d - lam[:, None], 0.0, caps)


def oracle_config(**overrides) -> SystemConfig:
    """Smallest oracle-eligible setting: one single-antenna BS and two users."""
    params = dict(num_bs=1, num_users=2, antennas_per_bs=1, private_cluster_size=1, common_cluster_size=1)
    params.update(overrides)
    return SystemConfig(**params)


def oracle_grid_search(config: SystemConfig, channel: ChannelState, structure, noise: float,
                       steps: int | None = None) -> OracleResult:
    """Global minimum of the objective for a tiny TIN instance.

    Exhaustive search over a per-stream power grid, refined locally.

    Requires one antenna and every private stream carried by a single BS, so
    only received powers enter the SINRs and phases drop out. Rates are set
    by an exact projection of the demands onto the achievable box and the
    per-BS fronthaul budgets.
    """
    B, K, L = channel.num_bs, channel.num_users, channel.antennas
    if L != 1 or B > 2 or K > 3:
        raise OracleRefusal("oracle needs L = 1, at most 2 BSs and at most 3 users")
    if structure.common_owners:
        raise OracleRefusal("oracle only handles private streams (TIN)")
    serving = [structure.clusters.serving(k, "private") for k in range(K)]
    if any(len(s) != 1 for s in serving):
        raise OracleRefusal("each private stream must be carried by exactly one BS")
    bs_of = np.array([s[0] for s in serving])

    steps = steps or {1: 4000, 2: 600, 3: 90}[K]
    pmax = config.max_power
    desired = np.asarray(config.desired_rates, dtype=float)
    gain = np.abs(channel.h[bs_of, :, 0].T) ** 2  # [k, j]: gain from j's BS to user k

    def evaluate(mesh):
        rx = mesh @ gain.T  # total received power at each user
        signal = mesh * np.diag(gain)
        caps = config.bandwidth * np.log2(1.0 + signal / (rx - signal + noise))
        rates = np.zeros_like(caps)
        for b in range(B):
            cols = np.flatnonzero(bs_of == b)
            if cols.size:
                rates[:, cols] = _project_rates(desired[cols], caps[:, cols], config.fronthaul_capacity)
        psi = config.alpha * np.mean((rates - desired) ** 2, axis=1) + (1 - config.alpha) * mesh.sum(axis=1)
        for b in range(B):
            psi[mesh[:, bs_of == b].sum(axis=1) > pmax * (1 + 1e-12)] = np.inf
        return psi, rates

    # optimal powers usually sit orders of magnitude below the budget, so the
    # grid is geometric, then the best cells are polished by a simplex search
    axis = np.concatenate(([0.0], np.geomspace(pmax * 1e-8, pmax, steps)))
    mesh = np.stack(np.meshgrid(*([axis] * K), indexing="ij"), axis=-1).reshape(-1, K)
    psi, _ = evaluate(mesh)
    starts = mesh[np.argsort(psi, kind="stable")[:5]]
    candidates = [mesh[int(np.argmin(psi))]]
    for x0 in starts:
        res = minimize(lambda x: evaluate(np.clip(x, 0.0, pmax)[None, :])[0][0], x0, method="Nelder-Mead",
                       options={"xatol": pmax * 1e-12, "fatol": 1e-14, "maxiter": 4000,
                                "initial_simplex": _simplex(x0, pmax)})
        candidates.append(np.clip(res.x, 0.0, pmax))
    cand = np.array(candidates)
    psi, rates = evaluate(cand)
    best = int(np.argmin(psi))
    return OracleResult(float(psi[best]), cand[best], rates[best], steps + 1)


def _simplex(x0: np.ndarray, pmax: float) -> np.ndarray:
    step = np.maximum(0.05 * x0, pmax * 1e-6)
    return np.vstack([x0] + [x0 + np.eye(len(x0))[i] * step[i] for i in range(len(x0))])


def scalar_search(config: SystemConfig, gain: float, noise: float, desired: float | None = None,
                  capacity: float | None = None) -> tuple[float, float]:
    """Single-user optimum over the transmit power by bounded scalar search.

    ``gain`` is ``|h|^2``; returns ``(psi, power)``.
    """
    d = config.desired_rates[0] if desired is None else desired
    cap = config.fronthaul_capacity if capacity is None else capacity
    a = config.alpha

    def psi(p):
        r = min(d, cap, config.bandwidth * math.log2(1.0 + gain * p / noise))
        return a * (r - d) ** 2 + (1 - a) * p

    grid = np.linspace(0.0, config.max_power, 2001)
    vals = [psi(p) for p in grid]
    j = int(np.argmin(vals))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    res = minimize_scalar(psi, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    if res.fun <= vals[j]:
        return float(res.fun), float(res.x)
    return float(vals[j]), float(grid[j])


def fronthaul_need(config: SystemConfig, seeds: Iterable[int]) -> float:
    """Seed-averaged per-BS fronthaul needed to deliver every demand privately.

    For each seed the busiest BS's sum of desired rates over its private
    cluster; used to place "constrained" and "generous" capacities.
    """
    needs = []
    for seed in seeds:
        scenario = make_scenario(config, seed)
        structure = build_structure("tin", scenario.channel, config)
        d = scenario.config.desired_rates
        needs.append(max(sum(d[k] for k in users) for users in structure.clusters.private))
    return float(np.mean(needs))


def solution_report(config: SystemConfig, scheme: str, seed: int, variant: str, sol: qt.Solution) -> dict:
    """Structured summary of one run; contains no timing so reruns match byte for byte."""
    w, r = sol.precoders, sol.rates
    feas = sol.feasibility
    return {
        "seed": seed,
        "scheme": scheme,
        "variant": variant,
        "psi": objective_psi(w, r, config),
        "mse": rate_mse(r, config.desired_rates),
        "power_w": w.total_power(),
        "phi": energy_efficiency_phi(w, r, config),
        "iterations": sol.iterations,
        "converged": sol.converged,
        "degraded": sol.degraded,
        "feasible": bool(feas.feasible) if feas else None,
        "worst_slack": feas.worst if feas else None,
        "desired_rates": list(config.desired_rates),
        "rates_private": r.private.tolist(),
        "rates_common": r.common.tolist(),
        "rates_total": r.total.tolist(),
        "config": config.to_dict(),
    }


def report_csv(reports: Sequence[dict]) -> str:
    """CSV rows: seed, scheme, psi, mse, power_w, phi, then one column per user rate."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    K = max(len(rep["rates_total"]) for rep in reports)
    writer.writerow(["seed", "scheme", "psi", "mse", "power_w", "phi"] + [f"rate_{k}" for k in range(K)])
    for rep in reports:
        writer.writerow([rep["seed"], rep["scheme"], rep["psi"], rep["mse"], rep["power_w"], rep["phi"]]
                        + list(rep["rates_total"]))
    return buf.getvalue()
