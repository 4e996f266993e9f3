"""Exact certification of min-max affine models over convex attack sets.

The nonconvex problem p* = inf_{x in X} g(x) is solved through a pair of
convex programs:

* the primal ``c_lower``: weights lambda on the simplex, one scaled point
  x_i per min-component, and the perspectives of g_i and of every c_k;
* the dual ``c_upper``: the conjugate of each g_i is never formed
  explicitly; the constraint g_i*(y_i) <= h is replaced by a family of LP
  multipliers nu_ij (one per piece) together with convex weights theta_i.

When the dual is strictly feasible the two optima coincide with p*, and
x_i / lambda_i for any lambda_i > 0 is a worst-case attack.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from . import conic
from .attack_set import (
    AttackSet,
    HalfSpace,
    Norm,
    NormBall,
    UnboundedSetError,
    add_membership,
    contains,
    verify_bounded,
)
from .model import MinMaxModel, evaluate, normalize_components
from .train import pgd_attack

log = logging.getLogger(__name__)

LAMBDA_MIN = 1e-7


class CertStatus(enum.Enum):
    CERTIFIED = "certified"
    FALSIFIED = "falsified"
    INDETERMINATE = "indeterminate"


class SlaterStatus(enum.Enum):
    OK = "ok"
    FAIL = "fail"
    INDETERMINATE = "indeterminate"


class CertificationError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class CertifyOptions:
    # the primal runs tighter than the solver default so that weights on
    # suboptimal components fall below lambda_min
    solver: conic.SolveOptions = field(default_factory=lambda: conic.SolveOptions(feas_tol=1e-10, gap_tol=1e-10))
    dual_solver: conic.SolveOptions = field(default_factory=conic.SolveOptions)
    # second attempt when a solve stalls just short of its tolerances; still
    # far tighter than duality_tol
    retry_solver: conic.SolveOptions = field(default_factory=lambda: conic.SolveOptions(feas_tol=1e-7, gap_tol=1e-7))
    slater_eps: float = 1e-6
    lambda_min: float = LAMBDA_MIN
    # |c_lower - c_upper| <= duality_tol * (1 + |c_lower|) or the run is indeterminate
    duality_tol: float = 1e-5
    # |p*| below this is reported as exactly 0 (boundary of the sensitive regime)
    zero_tol: float = 1e-9
    attack_tol: float = 1e-6
    check_slater: bool = True
    solve_dual: bool = True
    prune: bool = True


@dataclass
class PrimalSolution:
    lam: np.ndarray
    eta: np.ndarray
    x_atoms: np.ndarray
    objective: float


@dataclass
class DualSolution:
    alpha: float
    y: np.ndarray  # (m, d)
    z: np.ndarray  # (m, K, d)
    beta: np.ndarray  # (m, K)
    nu: np.ndarray  # (m, n, n), zero diagonal
    theta: np.ndarray  # (m, n)
    objective: float


@dataclass
class CertificationResult:
    p_star: float
    gap: float
    attack: np.ndarray | None
    atom_weights: np.ndarray | None
    status: CertStatus
    slater: SlaterStatus
    lower: float = float("nan")
    upper: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status is CertStatus.CERTIFIED

    def to_dict(self) -> dict:
        return {
            "p_star": _num(self.p_star),
            "gap": _num(self.gap),
            "status": self.status.value,
            "attack": None if self.attack is None else [float(v) for v in self.attack],
            "atom_weights": None if self.atom_weights is None else [float(v) for v in self.atom_weights],
            "slater": self.slater.value,
        }


def _num(v: float):
    v = float(v)
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------- pruning


def _piece_active_somewhere(a: np.ndarray, b: np.ndarray, j: int) -> bool:
    """Feasibility of {x : a_l.x + b_l <= a_j.x + b_j for all l}."""
    others = [l for l in range(a.shape[0]) if l != j]
    if not others:
        return True
    A_ub = a[others] - a[j]
    b_ub = b[j] - b[others]
    res = linprog(np.zeros(a.shape[1]), A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * a.shape[1], method="highs")
    if res.status == 2:
        return False
    if res.status != 0:
        raise RuntimeError(f"nonredundancy LP failed: {res.message}")
    return True


def prune_redundant(model: MinMaxModel) -> tuple[MinMaxModel, list[tuple[int, int]]]:
    """Drop affine pieces that are nowhere active in their component.

    Components left with fewer pieces are re-padded with copies of an
    active piece, so the returned model equals the input pointwise.
    """
    removed = []
    comps = []
    for i in range(model.m):
        a, b = model.a[i], model.b[i]
        keep = [j for j in range(model.n) if _piece_active_somewhere(a, b, j)]
        removed.extend((i, j) for j in range(model.n) if j not in keep)
        comps.append((a[keep], b[keep]))
    if not removed:
        return model, []
    return normalize_components(comps), removed


# ---------------------------------------------------------------- primal


def build_primal(model: MinMaxModel, X: AttackSet) -> conic.ConicProgram:
    """The primal program c_lower (minimize sum eta)."""
    if X.d != model.d:
        raise ValueError(f"dimension mismatch: model d={model.d}, attack set d={X.d}")
    m, n, d = model.a.shape
    B = conic.ConicBuilder()
    lam = B.add_variable(m, name="lambda", nonneg=True)
    eta = B.add_variable(m, name="eta")
    x = B.add_variable((m, d), name="x")
    B.add_equality(lam, 1.0, 1.0)
    # perspective of g_i: a_ij . x_i + b_ij lambda_i <= eta_i
    idx = np.concatenate([np.repeat(x[:, None, :], n, 1), np.repeat(lam[:, None, None], n, 1),
                          np.repeat(eta[:, None, None], n, 1)], axis=2)
    coef = np.concatenate([model.a, model.b[..., None], -np.ones((m, n, 1))], axis=2)
    B.add_les(idx.reshape(m * n, d + 2), coef.reshape(m * n, d + 2), 0.0)
    for c in X.constraints:
        _add_perspective_constraint(B, c, x, lam)
    B.set_objective(eta, 1.0, conic.Sense.MIN)
    return B.finalize()


def _add_perspective_constraint(B: conic.ConicBuilder, c, x: np.ndarray, lam: np.ndarray) -> None:
    """Perspective of c at (x_i, lambda_i) <= 0 for every row i of x."""
    m, d = x.shape
    ones = np.ones((m, d))
    if isinstance(c, HalfSpace):
        B.add_les(np.column_stack([x, lam]), np.append(c.psi, c.omega), 0.0)
        return
    ctr, eps = c.center, c.radius
    lam_md = np.repeat(lam[:, None], d, 1)
    if c.norm is Norm.L2:
        cone = B.add_variable((m, d + 1))
        for i in range(m):
            B.add_soc(cone[i])
        B.add_equalities(np.column_stack([cone[:, 0], lam]), [1.0, -eps], 0.0)
        B.add_equalities(np.stack([cone[:, 1:], x, lam_md], -1).reshape(-1, 3),
                         np.stack([ones, -ones, ones * ctr], -1).reshape(-1, 3), 0.0)
    elif c.norm is Norm.LINF:
        idx = np.stack([x, lam_md], -1).reshape(-1, 2)
        B.add_les(idx, np.stack([ones, -ctr - eps * ones], -1).reshape(-1, 2), 0.0)
        B.add_les(idx, np.stack([-ones, ctr - eps * ones], -1).reshape(-1, 2), 0.0)
    else:
        pos = B.add_variable((m, d), nonneg=True)
        neg = B.add_variable((m, d), nonneg=True)
        B.add_equalities(np.stack([x, lam_md, pos, neg], -1).reshape(-1, 4),
                         np.stack([ones, -ones * ctr, -ones, ones], -1).reshape(-1, 4), 0.0)
        B.add_les(np.column_stack([pos, neg, lam]), np.append(np.ones(2 * d), -eps), 0.0)


def primal_solution(program: conic.ConicProgram, sol: conic.ConicSolution) -> PrimalSolution:
    L = program.layout
    return PrimalSolution(sol[L["lambda"]].copy(), sol[L["eta"]].copy(), sol[L["x"]].copy(), sol.objective)


# ---------------------------------------------------------------- dual


def _others(n: int) -> np.ndarray:
    """Row j lists every piece index except j, shape (n, n-1)."""
    return np.array([[l for l in range(n) if l != j] for j in range(n)], dtype=np.int64).reshape(n, n - 1)


def build_dual(model: MinMaxModel, X: AttackSet, slater_margin: float = 0.0) -> conic.ConicProgram:
    """The dual program c_upper (maximize -alpha).

    ``slater_margin`` tightens every dual-norm constraint to
    ||z_ik||_* <= beta_ik - margin; linear constraints are left alone.
    """
    if X.d != model.d:
        raise ValueError(f"dimension mismatch: model d={model.d}, attack set d={X.d}")
    m, n, d = model.a.shape
    K = len(X.constraints)
    a, b = model.a, model.b
    O = _others(n)
    B = conic.ConicBuilder()
    alpha = B.add_variable(name="alpha")
    y = B.add_variable((m, d), name="y")
    theta = B.add_variable((m, n), name="theta", nonneg=True)
    z = B.add_variable((m, K, d), name="z")
    beta = B.add_variable((m, K), name="beta", nonneg=True)
    nu = B.add_variable((m, n, n - 1), name="nu")
    if nu.size:
        B.add_nonneg(nu.ravel())

    # y_i in conv{a_ij} with weights theta_i
    B.add_equalities(theta, 1.0, 1.0)
    B.add_equalities(np.concatenate([y[..., None], np.repeat(theta[:, None, :], d, 1)], -1).reshape(m * d, n + 1),
                     np.concatenate([np.ones((m, d, 1)), -a.transpose(0, 2, 1)], -1).reshape(m * d, n + 1), 0.0)

    # y_i - a_ij + sum_l nu_ijl (a_ij - a_il) = 0
    diff_a = a[:, :, None, :] - a[:, O, :]  # (m, n, n-1, d)
    idx = np.concatenate([np.broadcast_to(y[:, None, :, None], (m, n, d, 1)),
                          np.broadcast_to(nu[:, :, None, :], (m, n, d, n - 1))], -1)
    coef = np.concatenate([np.ones((m, n, d, 1)), diff_a.transpose(0, 1, 3, 2)], -1)
    B.add_equalities(idx.reshape(m * n * d, n), coef.reshape(m * n * d, n), a.reshape(-1))

    # -b_ij + sum_l nu_ijl (b_ij - b_il) <= alpha - sum_k P_k(z_ik, beta_ik)
    p_idx, p_coef = [], []
    for k, c in enumerate(X.constraints):
        if isinstance(c, HalfSpace):
            p_idx.append(beta[:, k, None])
            p_coef.append(np.full((m, 1), -c.omega))
        else:
            p_idx.append(np.column_stack([z[:, k], beta[:, k]]))
            p_coef.append(np.tile(np.append(c.center, c.radius), (m, 1)))
    p_idx, p_coef = np.concatenate(p_idx, 1), np.concatenate(p_coef, 1)
    P = p_idx.shape[1]
    idx = np.concatenate([nu, np.full((m, n, 1), alpha), np.broadcast_to(p_idx[:, None, :], (m, n, P))], -1)
    coef = np.concatenate([b[:, :, None] - b[:, O], -np.ones((m, n, 1)), np.broadcast_to(p_coef[:, None, :], (m, n, P))], -1)
    B.add_les(idx.reshape(m * n, -1), coef.reshape(m * n, -1), b.reshape(-1))

    for k, c in enumerate(X.constraints):
        _add_dual_norm_constraint(B, c, z[:, k], beta[:, k], slater_margin)
    # y_i + sum_k z_ik = 0
    B.add_equalities(np.concatenate([y[..., None], z.transpose(0, 2, 1)], -1).reshape(m * d, K + 1), 1.0, 0.0)
    B.set_objective([alpha], [-1.0], conic.Sense.MAX)
    return B.finalize()


def _add_dual_norm_constraint(B: conic.ConicBuilder, c, z: np.ndarray, beta: np.ndarray, margin: float) -> None:
    """Perspective-conjugate domain of c for every row i: z_i = beta_i psi, or ||z_i||_* <= beta_i - margin."""
    m, d = z.shape
    ones = np.ones((m, d))
    beta_md = np.repeat(beta[:, None], d, 1)
    if isinstance(c, HalfSpace):
        B.add_equalities(np.stack([z, beta_md], -1).reshape(-1, 2), np.stack([ones, -ones * c.psi], -1).reshape(-1, 2), 0.0)
        return
    dual = c.norm.dual
    if dual is Norm.L2:
        head = B.add_variable(m)
        for i in range(m):
            B.add_soc(np.append(head[i], z[i]))
        B.add_equalities(np.column_stack([head, beta]), [1.0, -1.0], -margin)
    elif dual is Norm.L1:
        pos = B.add_variable((m, d), nonneg=True)
        neg = B.add_variable((m, d), nonneg=True)
        B.add_equalities(np.stack([z, pos, neg], -1).reshape(-1, 3), [1.0, -1.0, 1.0], 0.0)
        B.add_les(np.column_stack([pos, neg, beta]), np.append(np.ones(2 * d), -1.0), -margin)
    else:
        idx = np.stack([z, beta_md], -1).reshape(-1, 2)
        B.add_les(idx, [1.0, -1.0], -margin)
        B.add_les(idx, [-1.0, -1.0], -margin)


def dual_solution(program: conic.ConicProgram, sol: conic.ConicSolution) -> DualSolution:
    L = program.layout
    nu_red = sol[L["nu"]]
    m, n = L["theta"].shape
    nu = np.zeros((m, n, n))
    O = _others(n)
    for j in range(n):
        nu[:, j, O[j]] = nu_red[:, j, :]
    return DualSolution(float(sol[L["alpha"]]), sol[L["y"]].copy(), sol[L["z"]].copy(), sol[L["beta"]].copy(),
                        nu, sol[L["theta"]].copy(), sol.objective)


def has_nonlinear_dual(X: AttackSet) -> bool:
    """Whether the dual keeps a second-order cone (only L2 balls do; L1/LInf are polyhedralized)."""
    return any(isinstance(c, NormBall) and c.norm is Norm.L2 for c in X.constraints)


def _slater_from(sol: conic.ConicSolution) -> SlaterStatus:
    if sol.ok:
        return SlaterStatus.OK
    if sol.status is conic.Status.INFEASIBLE:
        return SlaterStatus.FAIL
    return SlaterStatus.INDETERMINATE


def verify_slater(model: MinMaxModel, X: AttackSet, eps: float = 1e-6,
                  solver: conic.SolveOptions | None = None,
                  retry: conic.SolveOptions | None = None) -> SlaterStatus:
    """Solve the dual with every nonlinear constraint tightened by eps.

    If the reformulated dual is entirely linear, plain feasibility is
    enough. The tightened program is solved with its own objective, which
    is bounded whenever it is feasible and far better conditioned than a
    zero-objective feasibility problem.
    """
    margin = eps if has_nonlinear_dual(X) else 0.0
    prog = build_dual(model, X, slater_margin=margin)
    ladder = [solver or conic.SolveOptions(), retry or conic.SolveOptions(feas_tol=1e-7, gap_tol=1e-7)]
    return _slater_from(_solve_retrying(prog, *ladder))


def _solve_retrying(prog: conic.ConicProgram, *ladder: conic.SolveOptions) -> conic.ConicSolution:
    """Solve with each option set in turn until the result is not INACCURATE."""
    for opt in ladder:
        sol = conic.solve(prog, opt)
        if sol.status is not conic.Status.INACCURATE:
            break
    return sol


# ---------------------------------------------------------------- attacks


def extract_attack(primal: PrimalSolution, model: MinMaxModel, X: AttackSet,
                   lambda_min: float = LAMBDA_MIN, tol: float = 1e-6):
    """Best atom x_i / lambda_i among weights above lambda_min.

    Returns ``(attack, weights, atoms)`` where ``atoms`` maps component
    index to its recovered point. Raises :class:`CertificationError` when
    no weight clears the threshold or no atom lies in X.
    """
    lam = primal.lam
    idx = np.flatnonzero(lam > lambda_min)
    if idx.size == 0:
        raise CertificationError("all atom weights below threshold", {"lambda": lam.tolist()})
    atoms = {int(i): primal.x_atoms[i] / lam[i] for i in idx}
    inside = {i: p for i, p in atoms.items() if contains(X, p, tol)}
    if not inside:
        raise CertificationError("no recovered atom lies in the attack set",
                                 {"lambda": lam.tolist(), "violations": {i: max(c(p) for c in X) for i, p in atoms.items()}})
    best = min(inside, key=lambda i: (evaluate(model, inside[i]), i))
    return inside[best].copy(), lam.copy(), atoms


# ---------------------------------------------------------------- driver


def prepare(model: MinMaxModel, X: AttackSet, prune: bool = True) -> MinMaxModel:
    if X.d != model.d:
        raise ValueError(f"dimension mismatch: model d={model.d}, attack set d={X.d}")
    if not verify_bounded(X):
        raise UnboundedSetError("attack set is unbounded")
    if prune:
        model, _ = prune_redundant(model)
    return model


def certify(model: MinMaxModel, X: AttackSet, opts: CertifyOptions | None = None) -> CertificationResult:
    """Solve p* = inf_{x in X} g(x) exactly and classify the model.

    Solver trouble, a failed Slater check or a duality gap beyond
    ``duality_tol`` all yield INDETERMINATE; a certificate is only issued
    from a clean primal-dual pair.
    """
    opts = opts or CertifyOptions()
    t0 = time.perf_counter()
    work = prepare(model, X, opts.prune)
    diag: dict = {"m": work.m, "n": work.n}

    prog = build_primal(work, X)
    psol = _solve_retrying(prog, opts.solver, opts.dual_solver, opts.retry_solver)
    diag["primal_status"] = psol.status.value
    if not psol.ok:
        return CertificationResult(float("nan"), float("nan"), None, None, CertStatus.INDETERMINATE,
                                   SlaterStatus.INDETERMINATE,
                                   diagnostics=diag | {"reason": f"primal solve {psol.raw_status}"})
    primal = primal_solution(prog, psol)
    lower = primal.objective

    upper = float("nan")
    slater = SlaterStatus.OK
    if opts.solve_dual:
        dsol = _solve_retrying(build_dual(work, X), opts.dual_solver, opts.retry_solver)
        diag["dual_status"] = dsol.status.value
        if dsol.ok:
            upper = dsol.objective
        if opts.check_slater:
            if has_nonlinear_dual(X):
                slater = verify_slater(work, X, opts.slater_eps, opts.dual_solver, opts.retry_solver)
            else:
                slater = _slater_from(dsol)
    diag["slater"] = slater.value
    gap = abs(lower - upper) if math.isfinite(upper) else float("nan")

    try:
        attack, weights, atoms = extract_attack(primal, work, X, opts.lambda_min, opts.attack_tol)
    except CertificationError as exc:
        return CertificationResult(lower, gap, None, primal.lam, CertStatus.INDETERMINATE, slater, lower, upper,
                                   diag | {"reason": str(exc)} | exc.diagnostics)

    diag["atoms"] = {i: p.tolist() for i, p in atoms.items()}
    p_star = 0.0 if abs(lower) <= opts.zero_tol else lower
    status = CertStatus.CERTIFIED if p_star >= 0 else CertStatus.FALSIFIED
    reason = None
    if opts.solve_dual:
        if not math.isfinite(upper):
            reason = f"dual solve {diag['dual_status']}"
        elif gap > opts.duality_tol * (1 + abs(lower)):
            reason = f"duality gap {gap:.3e} exceeds tolerance"
        elif slater is not SlaterStatus.OK:
            reason = f"Slater check {slater.value}"
    value_err = abs(evaluate(work, attack) - lower)
    if value_err > opts.attack_tol * (1 + abs(lower)):
        reason = reason or f"attack value differs from primal optimum by {value_err:.3e}"
    if reason is not None:
        status = CertStatus.INDETERMINATE
        diag["reason"] = reason
    diag["seconds"] = time.perf_counter() - t0
    return CertificationResult(p_star, gap, attack, weights, status, slater, lower, upper, diag)


def enumerate_oracle(model: MinMaxModel, X: AttackSet, solver: conic.SolveOptions | None = None,
                     return_point: bool = False):
    """min_i min_{x in X} g_i(x), one epigraph program per component."""
    if X.d != model.d:
        raise ValueError(f"dimension mismatch: model d={model.d}, attack set d={X.d}")
    best, best_x = math.inf, None
    for i in range(model.m):
        B = conic.ConicBuilder()
        x = B.add_variable(model.d)
        t = B.add_variable()
        for j in range(model.n):
            B.add_le(np.append(x, t), np.append(model.a[i, j], -1.0), -model.b[i, j])
        add_membership(B, X, x)
        B.set_objective([t], [1.0])
        sol = conic.solve(B.finalize(), solver)
        if not sol.ok:
            raise CertificationError(f"oracle subproblem {i} failed: {sol.raw_status}")
        if sol.objective < best:
            best, best_x = sol.objective, sol[x].copy()
    return (best, best_x) if return_point else best


# ---------------------------------------------------------------- conjugate of g_i


def conjugate_system_feasible(a: np.ndarray, b: np.ndarray, y, h: float,
                              solver: conic.SolveOptions | None = None) -> bool:
    """Whether multipliers nu_j >= 0 exist with, for every piece j,

        y - a_j + sum_l nu_jl (a_j - a_l) = 0,
        -b_j + sum_l nu_jl (b_j - b_l) <= h.

    For a nonredundant component and y in conv{a_j} this holds iff
    g*(y) <= h.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = a.shape
    if n == 1:
        return bool(np.allclose(y, a[0], atol=1e-12) and -b[0] <= h)
    # minimize the smallest admissible h instead of testing feasibility at h itself;
    # near the boundary the optimum is far better conditioned than a bare feasibility problem
    B = conic.ConicBuilder()
    s = B.add_variable()
    for j in range(n):
        others = [l for l in range(n) if l != j]
        nu = B.add_variable(n - 1, nonneg=True)
        for r in range(d):
            B.add_equality(nu, a[j, r] - a[others, r], a[j, r] - y[r])
        B.add_le(np.append(nu, s), np.append(b[j] - b[others], -1.0), b[j])
    B.set_objective([s], [1.0])
    sol = conic.solve(B.finalize(), solver)
    if sol.ok:
        return sol.objective <= h + 1e-9 * (1 + abs(h))
    if sol.status is conic.Status.INFEASIBLE:
        return False
    raise CertificationError(f"conjugate feasibility solve failed: {sol.raw_status}")


def max_affine_conjugate(a: np.ndarray, b: np.ndarray, y, solver: conic.SolveOptions | None = None) -> float:
    """g*(y) = sup_x y.x - max_j(a_j.x + b_j) via its epigraph LP; +inf off conv{a_j}."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    n, d = a.shape
    B = conic.ConicBuilder()
    x = B.add_variable(d)
    t = B.add_variable()
    for j in range(n):
        B.add_le(np.append(x, t), np.append(a[j], -1.0), -b[j])
    B.set_objective(np.append(x, t), np.append(np.asarray(y, dtype=np.float64), -1.0), conic.Sense.MAX)
    sol = conic.solve(B.finalize(), solver)
    if sol.status is conic.Status.UNBOUNDED:
        return math.inf
    if not sol.ok:
        raise CertificationError(f"conjugate LP failed: {sol.raw_status}")
    return sol.objective


# ---------------------------------------------------------------- radius / accuracy


def certified_radius(model: MinMaxModel, center, norm: Norm | str = Norm.LINF, eps_max: float = 1.0,
                     tol: float = 1e-3, opts: CertifyOptions | None = None) -> float:
    """Largest probed radius whose ball certifies, by bisection on [0, eps_max]."""
    center = np.asarray(center, dtype=np.float64)
    norm = Norm.parse(norm)
    if evaluate(model, center) < 0:
        return 0.0
    pruned = prune_redundant(model)[0]
    sub = replace(opts or CertifyOptions(), prune=False)

    def probe(eps: float) -> bool:
        res = certify(pruned, AttackSet.ball(center, eps, norm), sub)
        if res.status is CertStatus.INDETERMINATE:
            raise CertificationError(f"indeterminate certification at radius {eps}", res.diagnostics)
        return res.certified

    if probe(eps_max):
        return float(eps_max)
    lo, hi = 0.0, float(eps_max)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _certify_point(args):
    model, center, eps, norm, opts = args
    if evaluate(model, center) < 0:
        return False
    if eps == 0:
        return True
    if norm is not Norm.L1:
        # a PGD point with g < 0 already falsifies the ball
        if evaluate(model, pgd_attack(model, center, eps, norm)) < 0:
            return False
    return certify(model, AttackSet.ball(center, eps, norm), opts).certified


def certified_accuracy(model: MinMaxModel, points, labels, eps: float, sensitive_label=1,
                       norm: Norm | str = Norm.LINF, opts: CertifyOptions | None = None, jobs: int = 1) -> float:
    """Fraction of sensitive-label points that are correctly classified and certified at radius eps."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    labels = np.asarray(labels)
    sel = points[labels == sensitive_label]
    if len(sel) == 0:
        return 0.0
    pruned = prune_redundant(model)[0]
    sub = replace(opts or CertifyOptions(), prune=False)
    tasks = [(pruned, p, eps, Norm.parse(norm), sub) for p in sel]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            flags = list(ex.map(_certify_point, tasks))
    else:
        flags = [_certify_point(t) for t in tasks]
    return float(np.mean(flags))
