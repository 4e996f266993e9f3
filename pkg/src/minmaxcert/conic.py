"""Linear-objective programs over free, nonnegative and second-order cone variables.

A :class:`ConicBuilder` collects variables, linear equality rows and cone
memberships; :meth:`ConicBuilder.finalize` freezes them into an immutable
:class:`ConicProgram`, which :func:`solve` hands to an interior-point
backend. Inequalities are expressed through explicit slack variables, so
every cone constraint is a plain membership of a tuple of variables.

Duals follow the Lagrangian convention for the min-sense program

    minimize c.x  s.t.  A x = b,  x_S in K

so that at optimality ``c = A^T y + S^T z`` with ``z`` in the dual cone.
For max-sense programs ``c`` is replaced by ``-c``.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class Sense(enum.Enum):
    MIN = "min"
    MAX = "max"


class ConeKind(enum.Enum):
    NONNEG = "nonneg"
    SOC = "soc"


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    INACCURATE = "inaccurate"


class BuilderError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    backend: str = "clarabel"


@dataclass(frozen=True, eq=False)
class ConicProgram:
    n_vars: int
    c: np.ndarray
    sense: Sense
    A: sp.csr_matrix
    b: np.ndarray
    cones: tuple[tuple[ConeKind, np.ndarray], ...]
    constant: float = 0.0
    layout: dict = field(default_factory=dict)

    @property
    def n_eq(self) -> int:
        return self.A.shape[0]

    def dump(self) -> str:
        """Plain-text listing for debugging; not a stable format."""
        lines = [f"{self.sense.value} " + " + ".join(f"{v:g}*x{i}" for i, v in enumerate(self.c) if v != 0)
                 + (f" + {self.constant:g}" if self.constant else "")]
        lines.append("equalities:")
        A = self.A.tocsr()
        for r in range(A.shape[0]):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            terms = " + ".join(f"{v:g}*x{j}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi]))
            lines.append(f"  {terms or '0'} = {self.b[r]:g}")
        lines.append("cones:")
        for kind, idx in self.cones:
            lines.append(f"  {kind.value}: " + ", ".join(f"x{j}" for j in idx))
        return "\n".join(lines)


@dataclass
class ConicSolution:
    status: Status
    x: np.ndarray | None
    eq_duals: np.ndarray | None
    objective: float
    residuals: dict
    backend: str = ""
    solve_time: float = 0.0
    raw_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def __getitem__(self, idx):
        """Primal values of a variable handle."""
        return self.x[idx]


class ConicBuilder:
    """Incremental construction of a :class:`ConicProgram`."""

    def __init__(self):
        self._n = 0
        # blocks of equality rows: (indices (R, k), coefficients (R, k), rhs (R,))
        self._blocks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._n_eq = 0
        self._cones: list[tuple[ConeKind, np.ndarray]] = []
        self._in_cone: set[int] = set()
        self._obj: dict[int, float] = {}
        self._constant = 0.0
        self._sense = Sense.MIN
        self._layout: dict = {}
        self._final = False

    @property
    def n_vars(self) -> int:
        return self._n

    def _check_open(self):
        if self._final:
            raise BuilderError("builder already finalized")

    def _check_idx(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64)).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= self._n):
            raise BuilderError(f"variable index out of range [0, {self._n})")
        return idx

    def add_variable(self, size: int | tuple | None = None, name: str | None = None, nonneg: bool = False):
        """New free variable(s). Returns an int for size=None, else an index array of that shape."""
        self._check_open()
        shape = () if size is None else (size if isinstance(size, tuple) else (int(size),))
        count = int(np.prod(shape)) if shape else 1
        idx = np.arange(self._n, self._n + count).reshape(shape)
        self._n += count
        if name is not None:
            self._layout[name] = idx
        if nonneg and count:
            self.add_nonneg(idx)
        return int(idx) if size is None else idx

    def add_equality(self, idx, coef, rhs: float) -> int:
        """sum(coef * x[idx]) == rhs. Returns the row handle."""
        self._check_open()
        idx = self._check_idx(idx)
        coef = np.broadcast_to(np.asarray(coef, dtype=np.float64).ravel(), idx.shape)
        self._blocks.append((idx[None, :], coef[None, :].copy(), np.array([float(rhs)])))
        self._n_eq += 1
        return self._n_eq - 1

    def add_le(self, idx, coef, rhs: float) -> int:
        """sum(coef * x[idx]) <= rhs via a fresh nonnegative slack. Returns the slack index."""
        s = self.add_variable()
        self.add_nonneg(s)
        idx = np.append(self._check_idx(idx), s)
        coef = np.append(np.broadcast_to(np.asarray(coef, dtype=np.float64).ravel(), (idx.size - 1,)), 1.0)
        self.add_equality(idx, coef, rhs)
        return s

    def add_equalities(self, idx, coef, rhs) -> np.ndarray:
        """Bulk form of :meth:`add_equality`: row r is sum(coef[r] * x[idx[r]]) == rhs[r]."""
        self._check_open()
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        coef = np.broadcast_to(np.asarray(coef, dtype=np.float64), idx.shape)
        rhs = np.broadcast_to(np.asarray(rhs, dtype=np.float64), idx.shape[:1])
        if idx.size and (idx.min() < 0 or idx.max() >= self._n):
            raise BuilderError(f"variable index out of range [0, {self._n})")
        start = self._n_eq
        self._blocks.append((idx.copy(), coef.copy(), rhs.copy()))
        self._n_eq += idx.shape[0]
        return np.arange(start, self._n_eq)

    def add_les(self, idx, coef, rhs) -> np.ndarray:
        """Bulk form of :meth:`add_le`. Returns the slack indices."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        coef = np.broadcast_to(np.asarray(coef, dtype=np.float64), idx.shape)
        slack = self.add_variable(idx.shape[0], nonneg=True)
        self.add_equalities(np.column_stack([idx, slack]), np.column_stack([coef, np.ones(idx.shape[0])]), rhs)
        return slack

    def _add_cone(self, kind: ConeKind, idx) -> int:
        self._check_open()
        idx = self._check_idx(idx)
        if idx.size == 0:
            raise BuilderError("empty cone")
        if len(set(idx.tolist())) != idx.size or self._in_cone.intersection(idx.tolist()):
            raise BuilderError("a variable may belong to at most one cone")
        self._in_cone.update(idx.tolist())
        self._cones.append((kind, idx))
        return len(self._cones) - 1

    def add_nonneg(self, idx) -> int:
        return self._add_cone(ConeKind.NONNEG, idx)

    def add_soc(self, idx) -> int:
        """||x[idx[1:]]||_2 <= x[idx[0]]."""
        return self._add_cone(ConeKind.SOC, idx)

    def set_objective(self, idx, coef, sense: Sense = Sense.MIN, constant: float = 0.0):
        self._check_open()
        idx = self._check_idx(idx)
        coef = np.broadcast_to(np.asarray(coef, dtype=np.float64).ravel(), idx.shape)
        self._obj = {}
        for i, v in zip(idx.tolist(), coef.tolist()):
            self._obj[i] = self._obj.get(i, 0.0) + v
        self._sense = sense
        self._constant = float(constant)

    def finalize(self) -> ConicProgram:
        self._check_open()
        self._final = True
        c = np.zeros(self._n)
        for i, v in self._obj.items():
            c[i] = v
        rows, cols, vals, rhs = [], [], [], []
        start = 0
        for idx, coef, b in self._blocks:
            R, k = idx.shape
            rows.append(np.repeat(np.arange(start, start + R), k))
            cols.append(idx.ravel())
            vals.append(coef.ravel())
            rhs.append(b)
            start += R
        if self._blocks:
            A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(self._n_eq, self._n))
        else:
            A = sp.csr_matrix((0, self._n))
        A.sum_duplicates()
        for arr in [c] + [idx for _, idx in self._cones]:
            arr.setflags(write=False)
        b = np.concatenate(rhs) if rhs else np.zeros(0)
        b.setflags(write=False)
        return ConicProgram(self._n, c, self._sense, A, b, tuple(self._cones), self._constant, dict(self._layout))


def _cone_matrix(program: ConicProgram) -> tuple[sp.csr_matrix, list[tuple[ConeKind, int]]]:
    """Selection matrix S stacking every coned variable, in cone order."""
    if not program.cones:
        return sp.csr_matrix((0, program.n_vars)), []
    cols = np.concatenate([idx for _, idx in program.cones])
    S = sp.csr_matrix((np.ones(cols.size), (np.arange(cols.size), cols)), shape=(cols.size, program.n_vars))
    return S, [(kind, idx.size) for kind, idx in program.cones]


def residuals(program: ConicProgram, x: np.ndarray) -> dict:
    """Primal equality and cone violations at x, absolute and scaled."""
    eq = float(np.max(np.abs(program.A @ x - program.b))) if program.n_eq else 0.0
    cone = 0.0
    for kind, idx in program.cones:
        v = x[idx]
        if kind is ConeKind.NONNEG:
            cone = max(cone, float(np.max(-v, initial=0.0)))
        else:
            cone = max(cone, float(np.linalg.norm(v[1:]) - v[0]))
    scale = 1.0 + max(float(np.max(np.abs(program.b), initial=0.0)), float(np.max(np.abs(x), initial=0.0)))
    return {"eq": eq, "cone": cone, "primal": max(eq, cone) / scale}


def _solve_clarabel(program: ConicProgram, opts: SolveOptions):
    import clarabel

    S, cones = _cone_matrix(program)
    A = sp.vstack([program.A, -S], format="csc")
    b = np.concatenate([program.b, np.zeros(S.shape[0])])
    sign = 1.0 if program.sense is Sense.MIN else -1.0
    q = sign * program.c
    cone_spec = []
    if program.n_eq:
        cone_spec.append(clarabel.ZeroConeT(program.n_eq))
    for kind, size in cones:
        if kind is ConeKind.NONNEG:
            if cone_spec and isinstance(cone_spec[-1], clarabel.NonnegativeConeT):
                cone_spec[-1] = clarabel.NonnegativeConeT(cone_spec[-1].dim + size)
            else:
                cone_spec.append(clarabel.NonnegativeConeT(size))
        else:
            cone_spec.append(clarabel.SecondOrderConeT(size))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = opts.feas_tol
    settings.tol_gap_abs = opts.gap_tol
    settings.tol_gap_rel = opts.gap_tol
    settings.max_iter = opts.max_iter
    settings.max_threads = 1
    P = sp.csc_matrix((program.n_vars, program.n_vars))
    solver = clarabel.DefaultSolver(P, q, A, b, cone_spec, settings)
    sol = solver.solve()
    raw = str(sol.status)
    status = {
        "Solved": Status.OPTIMAL,
        "PrimalInfeasible": Status.INFEASIBLE,
        "DualInfeasible": Status.UNBOUNDED,
    }.get(raw, Status.INACCURATE)
    x = np.array(sol.x) if status is Status.OPTIMAL or raw == "AlmostSolved" else None
    duals = -np.array(sol.z)[: program.n_eq] if x is not None else None
    gap = abs(sol.obj_val - sol.obj_val_dual)
    gap_rel = gap / (1.0 + min(abs(sol.obj_val), abs(sol.obj_val_dual))) if x is not None else float("nan")
    return status, x, duals, raw, {"gap_abs": gap, "gap_rel": gap_rel, "iterations": sol.iterations}


def _solve_cvxopt(program: ConicProgram, opts: SolveOptions):
    import cvxopt
    from cvxopt import solvers

    def spm(M):
        M = M.tocoo()
        return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), M.shape)

    S, cones = _cone_matrix(program)
    nonneg = [i for i, (kind, _) in enumerate(program.cones) if kind is ConeKind.NONNEG]
    soc = [i for i, (kind, _) in enumerate(program.cones) if kind is ConeKind.SOC]
    order = nonneg + soc
    cols = [program.cones[i][1] for i in order]
    G_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    G = sp.csr_matrix((-np.ones(G_cols.size), (np.arange(G_cols.size), G_cols)), shape=(G_cols.size, program.n_vars))
    dims = {"l": int(sum(program.cones[i][1].size for i in nonneg)),
            "q": [int(program.cones[i][1].size) for i in soc], "s": []}
    sign = 1.0 if program.sense is Sense.MIN else -1.0
    solvers.options.update({"show_progress": False, "abstol": opts.gap_tol, "reltol": opts.gap_tol,
                            "feastol": opts.feas_tol, "maxiters": opts.max_iter})
    try:
        res = solvers.conelp(cvxopt.matrix(sign * program.c), spm(G), cvxopt.matrix(np.zeros(G.shape[0])), dims,
                             spm(program.A), cvxopt.matrix(np.asarray(program.b, dtype=np.float64)))
    except (ValueError, ArithmeticError) as exc:
        return Status.INACCURATE, None, None, f"error: {exc}", {}
    raw = res["status"]
    status = {"optimal": Status.OPTIMAL, "primal infeasible": Status.INFEASIBLE,
              "dual infeasible": Status.UNBOUNDED}.get(raw, Status.INACCURATE)
    x = np.array(res["x"]).ravel() if res["x"] is not None and status is not Status.INFEASIBLE else None
    duals = -np.array(res["y"]).ravel() if x is not None else None
    return status, x, duals, raw, {"gap_abs": res.get("gap"), "gap_rel": res.get("relative gap")}


_BACKENDS = {"clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt}


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def solve(program: ConicProgram, opts: SolveOptions | None = None) -> ConicSolution:
    """Solve a finalized program.

    OPTIMAL is decided here rather than trusted from the backend: the
    returned point must meet ``feas_tol`` (scaled primal residual) and
    ``gap_tol`` (relative duality gap). A backend's "almost solved" point
    that meets both counts as optimal; a "solved" point that misses either
    is INACCURATE.
    """
    opts = opts or SolveOptions()
    try:
        backend = _BACKENDS[opts.backend]
    except KeyError:
        raise ValueError(f"unknown backend {opts.backend!r}; choose from {available_backends()}") from None
    t0 = time.perf_counter()
    status, x, duals, raw, info = backend(program, opts)
    elapsed = time.perf_counter() - t0
    res = dict(info)
    objective = float("nan")
    if x is not None:
        res.update(residuals(program, x))
        objective = float(program.c @ x + program.constant)
        if status in (Status.OPTIMAL, Status.INACCURATE):
            gap_rel = res.get("gap_rel")
            accurate = res["primal"] <= opts.feas_tol and gap_rel is not None and gap_rel <= opts.gap_tol
            status = Status.OPTIMAL if accurate else Status.INACCURATE
    elif status is Status.INFEASIBLE:
        objective = float("inf") if program.sense is Sense.MIN else float("-inf")
    elif status is Status.UNBOUNDED:
        objective = float("-inf") if program.sense is Sense.MIN else float("inf")
    return ConicSolution(status, x, duals, objective, res, opts.backend, elapsed, raw)

