"""
Cone-level encoding of the per-iteration convex subproblem.

For fixed quadratic-transform auxiliaries the subproblem in
``(w, r, gamma)`` has

* a linear objective over two epigraph scalars (rate-gap MSE, power),
  each bounded through a rotated second-order cone,
* linear fronthaul rows and per-BS power cones,
* one exponential cone per rate constraint ``r <= tau*log2(1 + gamma)``,
* one rotated cone per QT constraint ``g <= 0``.

Complex precoders are split into stacked real and imaginary parts, so every
``h^H w`` is a pair of real affine forms. Channels are normalised by the
noise standard deviation before encoding; SINRs are unchanged by this.

The program is stored in the standard form ``min c'x  s.t.  b - A x in K``
and handed to Clarabel, an interior-point conic solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import clarabel
import numpy as np
import scipy.sparse as sp

from .metrics import PrecoderSet, RateAllocation
from .netmodel import ChannelState, SystemConfig
from .structure import RsmaStructure, residual_set

LN2 = math.log(2.0)

CONE_KINDS = ("zero", "nonneg", "soc", "exp")


class BuildError(ValueError):
    """Raised when subproblem inputs have inconsistent dimensions."""


@dataclass(frozen=True)
class VariableLayout:
    """Index map from model quantities to entries of the real vector ``x``.

    Index arrays hold ``-1`` where a variable does not exist (masked
    precoder blocks, users without common streams, undecoded pairs).
    """

    n: int
    wp_re: np.ndarray  # (K, B*L)
    wp_im: np.ndarray
    wc_re: np.ndarray
    wc_im: np.ndarray
    rp: np.ndarray  # (K,)
    rc: np.ndarray  # (K,)
    gp: np.ndarray  # (K,)
    gc: np.ndarray  # (K, K) [owner, decoder]
    shares: Optional[np.ndarray] = None
    mse_epigraph: int = -1
    power_epigraph: int = -1

    @property
    def core_variable_count(self) -> int:
        """Complex precoder entries (one each) plus rates and SINR auxiliaries."""
        return int((self.wp_re >= 0).sum() + (self.wc_re >= 0).sum() + (self.rp >= 0).sum()
                   + (self.rc >= 0).sum() + (self.gp >= 0).sum() + (self.gc >= 0).sum())


@dataclass
class ConicProgram:
    """``min c'x + offset  s.t.  b - A x in K_1 x ... x K_m``."""

    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list[tuple[str, int]]
    layout: Optional[VariableLayout] = None
    offset: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def num_variables(self) -> int:
        return self.A.shape[1]

    def cone_count(self, kind: str) -> int:
        return sum(1 for k, _ in self.cones if k == kind)

    def residual(self, x: np.ndarray) -> float:
        """Largest cone violation of ``b - A x`` (0 when feasible)."""
        s = self.b - self.A @ x
        worst, pos = 0.0, 0
        for kind, dim in self.cones:
            blk = s[pos:pos + dim]
            pos += dim
            if kind == "zero":
                worst = max(worst, float(np.max(np.abs(blk))))
            elif kind == "nonneg":
                worst = max(worst, float(-blk.min()))
            elif kind == "soc":
                worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
            elif kind == "exp":
                x0, y0, z0 = blk
                if y0 <= 0:
                    worst = max(worst, -y0 if (x0 > 0 or z0 < 0) else 0.0)
                else:
                    worst = max(worst, float(y0 * math.exp(min(x0 / y0, 700.0)) - z0))
        return worst

    def dump(self) -> str:
        """Sparse text dump: header, cone list, objective, then A and b triplets."""
        A = self.A.tocoo()
        lines = ["# conic program: min c'x s.t. b - A x in K",
                 f"variables {self.num_variables} rows {self.A.shape[0]} nnz {A.nnz}",
                 "cones " + " ".join(f"{k}:{d}" for k, d in self.cones),
                 f"offset {self.offset!r}"]
        lines += [f"c {j} {v!r}" for j, v in enumerate(self.c) if v != 0.0]
        order = np.lexsort((A.col, A.row))
        lines += [f"A {A.row[t]} {A.col[t]} {A.data[t]!r}" for t in order]
        lines += [f"b {i} {v!r}" for i, v in enumerate(self.b) if v != 0.0]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    verbose: bool = False

    def __post_init__(self):
        if not (self.feas_tol > 0 and self.gap_tol > 0 and self.max_iter > 0):
            raise ValueError("solver tolerances and iteration limit must be positive")


@dataclass
class SolverResult:
    status: str  # optimal | infeasible | numerical-failure
    x: np.ndarray
    objective: float
    iterations: int
    raw_status: str
    precoders: Optional[PrecoderSet] = None
    rates: Optional[RateAllocation] = None
    gamma_private: Optional[np.ndarray] = None
    gamma_common: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class _Rows:
    """Accumulates cone blocks as sparse rows of ``s = const + coef . x``."""

    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.consts: list[float] = []
        self.cones: list[tuple[str, int]] = []

    def _row(self, idx, coef, const):
        r = len(self.consts)
        idx = np.asarray(idx, dtype=np.int64)
        coef = np.asarray(coef, dtype=float)
        if np.any(idx < 0):
            raise BuildError("affine row references a missing variable")
        self.rows.append(np.full(idx.size, r, dtype=np.int64))
        self.cols.append(idx)
        self.vals.append(coef)
        self.consts.append(float(const))

    def add(self, kind, exprs):
        """Add one cone block; ``exprs`` is a list of ``(idx, coef, const)``."""
        if kind not in CONE_KINDS:
            raise BuildError(f"unknown cone kind {kind}")
        if not exprs:
            return
        for idx, coef, const in exprs:
            self._row(idx, coef, const)
        if kind in ("zero", "nonneg") and self.cones and self.cones[-1][0] == kind:
            self.cones[-1] = (kind, self.cones[-1][1] + len(exprs))
        else:
            self.cones.append((kind, len(exprs)))

    def program(self, n, c, **kw) -> ConicProgram:
        m = len(self.consts)
        rows = np.concatenate(self.rows) if self.rows else np.zeros(0, np.int64)
        cols = np.concatenate(self.cols) if self.cols else np.zeros(0, np.int64)
        vals = np.concatenate(self.vals) if self.vals else np.zeros(0)
        # s = const + coef.x  <=>  b - A x with A = -coef, b = const
        A = sp.csc_matrix((-vals, (rows, cols)), shape=(m, n))
        A.sum_duplicates()
        return ConicProgram(np.asarray(c, float), A, np.asarray(self.consts), list(self.cones), **kw)


def _expr(idx=(), coef=(), const=0.0):
    return (np.asarray(idx, np.int64), np.asarray(coef, float), const)


def _scaled(expr, factor, shift=0.0):
    idx, coef, const = expr
    return idx, coef * factor, const * factor + shift


def _sum(*exprs):
    idx = np.concatenate([e[0] for e in exprs])
    coef = np.concatenate([e[1] for e in exprs])
    return idx, coef, sum(e[2] for e in exprs)


def _inner(h: np.ndarray, re_idx: np.ndarray, im_idx: np.ndarray):
    """Real and imaginary parts of ``h^H w`` as affine forms in (Re w, Im w)."""
    m = re_idx >= 0
    a, b = h.real[m], h.imag[m]
    idx = np.concatenate([re_idx[m], im_idx[m]])
    return _expr(idx, np.concatenate([a, b])), _expr(idx, np.concatenate([-b, a]))


def encode_rate_log(rate_expr, gamma_idx: int, tau: float):
    """Exponential-cone block for ``rate <= tau * log2(1 + gamma)``.

    Encoded as ``(ln2 * rate / tau, 1, 1 + gamma)`` in the exponential cone,
    i.e. ``exp(ln2 * rate / tau) <= 1 + gamma``.
    """
    if not tau > 0:
        raise BuildError("bandwidth must be positive")
    return [_scaled(rate_expr, LN2 / tau), _expr(const=1.0), _expr([gamma_idx], [1.0], 1.0)]


def _rotated_block(lhs, terms):
    """Rows of ``sum |t|^2 <= lhs`` as a second-order cone ``(lhs+1, lhs-1, 2t)``."""
    return [_scaled(lhs, 1.0, 1.0), _scaled(lhs, 1.0, -1.0)] + [_scaled(t, 2.0) for t in terms]


def encode_qt(u: complex, gamma_idx: int, signal: tuple, interferers: list):
    """QT constraint ``gamma - 2Re{u^* w^H h} + |u|^2 (1 + sum |h^H w_j|^2) <= 0``.

    ``signal`` is the (Re, Im) pair of ``h^H w`` for the intended stream and
    ``interferers`` a list of such pairs; noise is normalised to one.
    Returns ``(kind, rows)``.
    """
    sig_re, sig_im = signal
    # Re{u^* (w^H h)} = Re{u (h^H w)} = Re(u) Re(h^H w) - Im(u) Im(h^H w)
    lhs = _sum(_scaled(sig_re, 2.0 * u.real), _scaled(sig_im, -2.0 * u.imag),
               _expr([gamma_idx], [-1.0], -abs(u) ** 2))
    mag = abs(u)
    terms = [_scaled(part, mag) for pair in interferers for part in pair]
    if mag == 0.0 or not terms:
        return "nonneg", [lhs]
    return "soc", _rotated_block(lhs, terms)


def _allocate(structure: RsmaStructure, channel: ChannelState, need_mse: bool, need_power: bool):
    K, B, L = channel.num_users, channel.num_bs, channel.antennas
    clusters = structure.clusters
    counter = iter(range(10 ** 9))

    def block(mask):
        re = np.full((K, B * L), -1, dtype=np.int64)
        im = np.full((K, B * L), -1, dtype=np.int64)
        for k in range(K):
            for b in range(B):
                if mask[b, k]:
                    for a in range(L):
                        re[k, b * L + a] = next(counter)
                        im[k, b * L + a] = next(counter)
        return re, im

    owners = set(structure.common_owners)
    wp_re, wp_im = block(clusters.mask(K, "private"))
    cmask = clusters.mask(K, "common") & np.array([k in owners for k in range(K)])[None, :]
    wc_re, wc_im = block(cmask)
    rp = np.array([next(counter) for _ in range(K)], dtype=np.int64)
    rc = np.array([next(counter) if k in owners else -1 for k in range(K)], dtype=np.int64)
    gp = np.array([next(counter) for _ in range(K)], dtype=np.int64)
    gc = np.full((K, K), -1, dtype=np.int64)
    for i, k in structure.decode.pairs():
        if i in owners:
            gc[i, k] = next(counter)
    shares = np.array([next(counter) for _ in range(K)], dtype=np.int64) if structure.shared_common else None
    mse = next(counter) if need_mse else -1
    power = next(counter) if need_power else -1
    n = next(counter)
    return VariableLayout(n, wp_re, wp_im, wc_re, wc_im, rp, rc, gp, gc, shares, mse, power)


def _check_aux(aux, K):
    up = np.asarray(aux.private)
    uc = np.asarray(aux.common)
    if up.shape != (K,) or uc.shape != (K, K):
        raise BuildError(f"auxiliaries have shapes {up.shape}, {uc.shape}; expected ({K},), ({K}, {K})")
    if not (np.all(np.isfinite(up)) and np.all(np.isfinite(uc))):
        raise BuildError("auxiliaries must be finite")
    return up, uc


def build_subproblem(channel: ChannelState, structure: RsmaStructure, aux, config: SystemConfig,
                     noise: float, *, alpha: float | None = None, desired=None) -> ConicProgram:
    """Assemble the convex subproblem for fixed auxiliaries ``aux``.

    ``aux`` carries physical-unit auxiliaries (``private`` (K,), ``common``
    (K, K) indexed [owner, decoder]); they are rescaled along with the
    channel normalisation.
    """
    K, B, L = channel.num_users, channel.num_bs, channel.antennas
    if (config.num_users, config.num_bs, config.antennas_per_bs) != (K, B, L):
        raise BuildError("channel dimensions do not match the configuration")
    if structure.num_users != K or structure.clusters.num_bs != B:
        raise BuildError("structure dimensions do not match the channel")
    up, uc = _check_aux(aux, K)
    a = config.alpha if alpha is None else alpha
    d = np.asarray(config.desired_rates if desired is None else desired, dtype=float)
    if d.shape != (K,):
        raise BuildError("desired rates need one entry per user")

    sigma = math.sqrt(noise)
    Hn = channel.stacked / sigma
    up, uc = up * sigma, uc * sigma
    tau = config.bandwidth
    lay = _allocate(structure, channel, need_mse=a > 0, need_power=a < 1)
    decode = structure.decode
    owners = structure.common_owners
    rows = _Rows()

    # equality linking the super-common rate with the per-user shares
    if structure.shared_common:
        car = structure.carrier
        rows.add("zero", [_expr([lay.rc[car], *lay.shares], [1.0] + [-1.0] * K)])

    # sign constraints on rates and SINR auxiliaries
    signs = [lay.rp, lay.rc[lay.rc >= 0], lay.gp, lay.gc[lay.gc >= 0]]
    if lay.shares is not None:
        signs.append(lay.shares)
    rows.add("nonneg", [_expr([j], [1.0]) for j in np.concatenate(signs)])

    # fronthaul
    front = []
    for bs in range(B):
        idx = [lay.rp[k] for k in sorted(structure.clusters.private[bs])]
        idx += [lay.rc[k] for k in sorted(structure.clusters.common[bs]) if lay.rc[k] >= 0]
        front.append(_expr(idx, -np.ones(len(idx)), config.fronthaul_capacity))
    rows.add("nonneg", front)

    # per-BS power
    for bs in range(B):
        sl = slice(bs * L, (bs + 1) * L)
        ent = [arr[:, sl].ravel() for arr in (lay.wp_re, lay.wp_im, lay.wc_re, lay.wc_im)]
        ent = np.concatenate(ent)
        ent = ent[ent >= 0]
        if ent.size:
            rows.add("soc", [_expr(const=math.sqrt(config.max_power))] + [_expr([j], [1.0]) for j in ent])

    # achievable-rate exponential cones
    for k in range(K):
        rows.add("exp", encode_rate_log(_expr([lay.rp[k]], [1.0]), lay.gp[k], tau))
    for i, k in decode.pairs():
        if lay.gc[i, k] >= 0:
            rows.add("exp", encode_rate_log(_expr([lay.rc[i]], [1.0]), lay.gc[i, k], tau))

    # QT constraints
    priv_forms = [[_inner(Hn[k], lay.wp_re[j], lay.wp_im[j]) for j in range(K)] for k in range(K)]
    comm_forms = [[_inner(Hn[k], lay.wc_re[j], lay.wc_im[j]) if j in owners else None for j in range(K)]
                  for k in range(K)]
    for k in range(K):
        decoded = set(decode.order[k])
        interf = [priv_forms[k][j] for j in range(K) if j != k and (lay.wp_re[j] >= 0).any()]
        interf += [comm_forms[k][l] for l in owners if l not in decoded]
        kind, blk = encode_qt(complex(up[k]), lay.gp[k], priv_forms[k][k], interf)
        rows.add(kind, blk)
    for i, k in decode.pairs():
        if lay.gc[i, k] < 0:
            continue
        later = residual_set(decode, i, k)
        decoded = set(decode.order[k])
        interf = [priv_forms[k][j] for j in range(K) if (lay.wp_re[j] >= 0).any()]
        interf += [comm_forms[k][l] for l in owners if l not in decoded or l in later]
        kind, blk = encode_qt(complex(uc[i, k]), lay.gc[i, k], comm_forms[k][i], interf)
        rows.add(kind, blk)

    # objective epigraphs
    c = np.zeros(lay.n)
    if lay.mse_epigraph >= 0:
        gaps = []
        for k in range(K):
            extra = lay.shares[k] if lay.shares is not None else lay.rc[k]
            idx = [lay.rp[k]] + ([extra] if extra >= 0 else [])
            gaps.append(_expr(idx, np.ones(len(idx)), -d[k]))
        rows.add("soc", _rotated_block(_expr([lay.mse_epigraph], [1.0]), gaps))
        c[lay.mse_epigraph] = a / K
    if lay.power_epigraph >= 0:
        ent = np.concatenate([arr.ravel() for arr in (lay.wp_re, lay.wp_im, lay.wc_re, lay.wc_im)])
        ent = ent[ent >= 0]
        rows.add("soc", _rotated_block(_expr([lay.power_epigraph], [1.0]), [_expr([j], [1.0]) for j in ent]))
        c[lay.power_epigraph] = 1.0 - a

    return rows.program(lay.n, c, layout=lay, meta={"alpha": a, "tau": tau, "noise": noise})


_CLARABEL_CONES = {
    "zero": clarabel.ZeroConeT,
    "nonneg": clarabel.NonnegativeConeT,
    "soc": clarabel.SecondOrderConeT,
}


def _status(raw: str, gap: float, settings: SolverSettings) -> str:
    if raw == "Solved":
        return "optimal"
    # stalls a hair short of the gap target are accepted when the certified
    # gap is still within 100x the requested accuracy (primal feasibility is
    # checked separately by the caller)
    if raw in ("AlmostSolved", "InsufficientProgress", "MaxIterations") and gap <= 100.0 * settings.gap_tol:
        return "optimal"
    if raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return "infeasible"
    return "numerical-failure"


# Fallbacks tried in order when a solve neither succeeds nor proves
# infeasibility: wider Ruiz equilibration copes with the large dynamic range
# of channel gains.
_RETRIES = ({}, {"equilibrate_max_scaling": 1e8, "equilibrate_min_scaling": 1e-8, "equilibrate_max_iter": 30})


def _clarabel_solve(program: ConicProgram, settings: SolverSettings, extra: dict):
    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.tol_feas = settings.feas_tol
    opts.tol_gap_abs = settings.gap_tol
    opts.tol_gap_rel = settings.gap_tol
    opts.max_iter = settings.max_iter
    for key, value in extra.items():
        setattr(opts, key, value)
    cones = [clarabel.ExponentialConeT() if kind == "exp" else _CLARABEL_CONES[kind](dim)
             for kind, dim in program.cones]
    n = program.num_variables
    return clarabel.DefaultSolver(sp.csc_matrix((n, n)), program.c, program.A, program.b, cones, opts).solve()


def solve(program: ConicProgram, settings: SolverSettings | None = None) -> SolverResult:
    """Solve with Clarabel and map the primal point back to model variables."""
    settings = settings or SolverSettings()
    limit = 1e3 * settings.feas_tol * max(1.0, float(np.abs(program.b).max(initial=0.0)))
    for extra in _RETRIES:
        sol = _clarabel_solve(program, settings, extra)
        raw = str(sol.status)
        x = np.asarray(sol.x, dtype=float)
        gap = abs(sol.obj_val - sol.obj_val_dual) / max(1.0, abs(sol.obj_val))
        status = _status(raw, gap if np.isfinite(gap) else np.inf, settings)
        if status == "optimal" and program.residual(x) > limit:
            status = "numerical-failure"
        if status != "numerical-failure":
            break
    result = SolverResult(status, x, float(program.c @ x + program.offset), int(sol.iterations), raw)
    if program.layout is not None and x.size == program.num_variables and np.all(np.isfinite(x)):
        _map_back(result, program.layout)
    return result


def _gather(x, idx):
    out = np.zeros(idx.shape)
    m = idx >= 0
    out[m] = x[idx[m]]
    return out


def _map_back(result: SolverResult, lay: VariableLayout) -> None:
    x = result.x
    wp = _gather(x, lay.wp_re) + 1j * _gather(x, lay.wp_im)
    wc = _gather(x, lay.wc_re) + 1j * _gather(x, lay.wc_im)
    result.precoders = PrecoderSet(wp, wc)
    shares = _gather(x, lay.shares) if lay.shares is not None else None
    result.rates = RateAllocation(_gather(x, lay.rp), _gather(x, lay.rc), shares)
    result.gamma_private = _gather(x, lay.gp)
    gc = np.full(lay.gc.shape, np.nan)
    m = lay.gc >= 0
    gc[m] = x[lay.gc[m]]
    result.gamma_common = gc


def expected_core_count(num_users: int, num_bs: int, antennas: int) -> int:
    """Variable count of the full structure: K(2(BL+1)+K+1)."""
    return num_users * (2 * (num_bs * antennas + 1) + num_users + 1)
