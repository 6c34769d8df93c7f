"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Runs are shared through session fixtures; the whole file takes a few
minutes on one core.
"""

import numpy as np
import pytest

from rsma_cran import conic, harness, qt
from rsma_cran.baselines import build_structure
from rsma_cran.metrics import all_sinrs, energy_efficiency_phi, objective_psi, qt_common, qt_private
from rsma_cran.netmodel import ChannelState, SystemConfig, desk_config, make_scenario

from conftest import ACCEPTANCE

SEEDS = range(20)
SLACK = 1e-6


def report(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{n:2d}] {title}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def mean_psi_phi(rows):
    return float(np.mean([r[0] for r in rows])), float(np.mean([r[1] for r in rows]))


@pytest.fixture(scope="session")
def solutions():
    """Every Solution returned anywhere in this suite, for the feasibility check."""
    return []


@pytest.fixture(scope="session")
def desk_runs(solutions):
    cfg = desk_config()
    runs = []
    for seed in range(200):
        _, _, sol = harness.run_scheme(cfg, "rsma", seed)
        runs.append(sol)
        solutions.append(sol)
    return runs


def test_01_qt_identity():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        B, K, L = int(rng.integers(1, 5)), int(rng.integers(1, 7)), int(rng.integers(1, 4))
        cfg = SystemConfig(num_bs=B, num_users=K, antennas_per_bs=L, private_cluster_size=int(rng.integers(1, B + 1)),
                           common_cluster_size=int(rng.integers(1, B + 1)), decode_set_size=int(rng.integers(0, K)))
        h = (rng.standard_normal((B, K, L)) + 1j * rng.standard_normal((B, K, L))) * 10 ** rng.uniform(-7, -5)
        ch = ChannelState(h)
        s = build_structure("rsma", ch, cfg)
        w = qt.init_precoders(ch, s, cfg, "random", rng)
        noise = 10 ** rng.uniform(-14, -12)
        aux = qt.update_aux(w, ch, s, noise)
        priv, comm = all_sinrs(w, ch, s.decode, noise)
        gamma = float(rng.uniform(0, 5))
        for k in range(K):
            g = qt_private(k, aux.private[k], gamma, w, ch, s.decode, noise)
            worst = max(worst, abs(g - (gamma - priv[k])))
        for i, k in s.decode.pairs():
            g = qt_common(i, k, aux.common[i, k], gamma, w, ch, s.decode, noise)
            worst = max(worst, abs(g - (gamma - comm[i, k])))
    report(1, "QT tightness identity", worst <= 1e-9, f"max |g - (gamma - SINR)| = {worst:.2e} over 100 instances")


def test_02_monotone_descent(desk_runs):
    bad = []
    for seed, sol in enumerate(desk_runs):
        psi = [rec.psi for rec in sol.log[1:]]
        if any(b > a + SLACK * max(1.0, abs(a)) for a, b in zip(psi, psi[1:])):
            bad.append(seed)
    report(2, "monotone descent", not bad, f"{len(desk_runs)} runs, non-monotone seeds: {bad or 'none'}")


def test_03_convergence_speed(desk_runs):
    its = np.array([desk_runs[s].iterations for s in SEEDS])
    ok = np.median(its) <= 10 and its.mean() <= 6
    report(3, "convergence speed", ok, f"median {np.median(its):g}, mean {its.mean():.2f} over seeds 0-19")


def test_05_oracle(solutions):
    cfg = harness.oracle_config()
    ratios = []
    for seed in range(20):
        sc = make_scenario(cfg, seed)
        s = build_structure("tin", sc.channel, cfg)
        oracle = harness.oracle_grid_search(cfg, sc.channel, s, sc.noise_power)
        sol = qt.run(cfg, sc.channel, s, sc.noise_power)
        solutions.append(sol)
        ratios.append(sol.psi / oracle.psi)
    report(5, "small-instance oracle", max(ratios) <= 1.05, f"worst psi / oracle = {max(ratios):.5f} on 20 instances")


@pytest.fixture(scope="session")
def ordering_runs(solutions):
    cfg = desk_config()
    need = harness.fronthaul_need(cfg, SEEDS)
    out = {}
    for label, cap in (("constrained", 0.5 * need), ("generous", 4.0 * need)):
        point = cfg.replace(fronthaul_capacity=cap)
        for scheme in ("rsma", "scm", "tin"):
            rows = []
            for seed in SEEDS:
                sc, _, sol = harness.run_scheme(point, scheme, seed)
                solutions.append(sol)
                rows.append((sol.psi, energy_efficiency_phi(sol.precoders, sol.rates, sc.config)))
            out[label, scheme] = mean_psi_phi(rows)
    return need, out


def test_06_scheme_ordering(ordering_runs):
    need, out = ordering_runs
    psi = {s: out["constrained", s][0] for s in ("rsma", "scm", "tin")}
    phi = {s: out["constrained", s][1] for s in ("rsma", "scm", "tin")}
    gen = [out["generous", s][1] for s in ("rsma", "scm", "tin")]
    spread = (max(gen) - min(gen)) / max(gen)
    ok = (psi["rsma"] <= psi["scm"] <= psi["tin"] and phi["rsma"] >= phi["scm"] >= phi["tin"] and spread <= 0.05)
    detail = (f"need {need:.1f} Mbps; at C={0.5 * need:.1f} psi rsma/scm/tin = "
              f"{psi['rsma']:.6f}/{psi['scm']:.6f}/{psi['tin']:.6f}, phi = "
              f"{phi['rsma']:.6f}/{phi['scm']:.6f}/{phi['tin']:.6f}; at C={4 * need:.1f} phi spread {spread:.2%}")
    report(6, "scheme ordering", ok, detail)


def test_07_alpha_tradeoff(solutions):
    alphas = np.round(np.arange(0.1, 0.91, 0.1), 2)
    spec = harness.SweepSpec("alpha", tuple(alphas), ("rsma",), seeds=tuple(SEEDS))
    rows = harness.sweep(spec, desk_config())
    mse = np.array([np.mean([r.mse for r in rows if r.value == a]) for a in alphas])
    power = np.array([np.mean([r.power_w for r in rows if r.value == a]) for a in alphas])
    mse_bad = int(np.sum(np.diff(mse) > 0))
    power_bad = int(np.sum(np.diff(power) < 0))
    ok = mse_bad <= 1 and power_bad <= 1 and all(r.status == "converged" for r in rows)
    report(7, "alpha trade-off", ok, f"MSE {mse[0]:.4f} -> {mse[-1]:.4f} ({mse_bad} violations), "
                                     f"power {power[0]:.5f} -> {power[-1]:.5f} W ({power_bad} violations)")


def test_08_mixed_criticality():
    cfg = desk_config()
    seeds = tuple(range(10))
    failures, lines = [], []
    for lo in (3.0, 4.0, 5.0):
        means = {}
        for variant in harness.VARIANTS:
            spec = harness.SweepSpec("target-rates", (lo,), ("rsma",), variant, seeds)
            means[variant] = float(np.mean([r.psi for r in harness.sweep(spec, cfg)]))
        chain = (means["Mixed"], means["NoMixME"], max(means["NoMixLO"], means["NoMixHI"]), means["NoCrit"])
        if not all(a <= b for a, b in zip(chain, chain[1:])):
            failures.append(lo)
        lines.append(f"LO={lo:g}: " + "/".join(f"{v:.3f}" for v in chain))
    report(8, "mixed-criticality benefit", not failures,
           "Mixed/NoMixME/max(LO,HI)/NoCrit " + "; ".join(lines))


def test_09_variable_count():
    rng = np.random.default_rng(9)
    wrong = []
    for B, K, L in [(1, 1, 1), (2, 3, 2), (4, 6, 2), (3, 5, 4), (10, 16, 2)]:
        cfg = SystemConfig(num_bs=B, num_users=K, antennas_per_bs=L, private_cluster_size=B,
                           common_cluster_size=B, decode_set_size=K - 1)
        ch = ChannelState((rng.standard_normal((B, K, L)) + 1j * rng.standard_normal((B, K, L))) * 1e-6)
        s = build_structure("rsma", ch, cfg)
        aux = qt.AuxVariables(np.ones(K, complex), np.where(s.decode_matrix(), 1.0 + 0j, 0j))
        count = conic.build_subproblem(ch, s, aux, cfg, 1e-13).layout.core_variable_count
        if count != K * (2 * (B * L + 1) + K + 1):
            wrong.append((B, K, L, count))
    report(9, "variable count", not wrong, f"d1 = K(2(BL+1)+K+1) on 5 shapes incl. (10,16,2) -> 944; "
                                           f"mismatches: {wrong or 'none'}")


def test_10_determinism():
    spec = harness.SweepSpec("fronthaul", (10.0, 30.0), ("rsma", "tin", "scm"), seeds=(0, 1))
    cfg = desk_config()
    a = harness.rows_to_csv(harness.sweep(spec, cfg))
    b = harness.rows_to_csv(harness.sweep(spec, cfg))
    report(10, "determinism", a == b, f"{len(a.splitlines()) - 1} rows, byte-identical: {a == b}")


def test_zz_04_feasibility(solutions, desk_runs, ordering_runs):
    # runs last so it sees every solution gathered above
    bad = [i for i, sol in enumerate(solutions) if sol.feasibility.worst < -SLACK]
    worst = min(sol.feasibility.worst for sol in solutions)
    report(4, "feasibility", not bad, f"{len(solutions)} solutions, worst scaled slack {worst:.2e}")
