"""Convex attack sets X = {x : c_k(x) <= 0} built from norm balls and half-spaces.

Each constraint family carries the closed-form perspective, conjugate and
perspective-of-conjugate used by the certification programs.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from os import PathLike
from typing import Sequence, Union

import numpy as np

from . import conic


class Norm(enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    @property
    def dual(self) -> "Norm":
        return {Norm.L1: Norm.LINF, Norm.L2: Norm.L2, Norm.LINF: Norm.L1}[self]

    @property
    def ord(self):
        return {Norm.L1: 1, Norm.L2: 2, Norm.LINF: np.inf}[self]

    @classmethod
    def parse(cls, value) -> "Norm":
        if isinstance(value, Norm):
            return value
        key = str(value).lower().replace("_", "").replace("-", "")
        aliases = {"l1": "l1", "1": "l1", "l2": "l2", "2": "l2", "linf": "linf", "inf": "linf", "linfty": "linf"}
        if key not in aliases:
            raise ValueError(f"unknown norm {value!r}")
        return cls(aliases[key])


def norm(kind: Norm, v) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64), ord=Norm.parse(kind).ord))


def dual_norm(kind: Norm, z) -> float:
    """||z||_* for the dual of the given primal norm (L1 <-> LInf, L2 <-> L2)."""
    return norm(Norm.parse(kind).dual, z)


@dataclass(frozen=True)
class ExtendedReal:
    """A value in R u {+inf}, tagged rather than encoded as a float sentinel."""

    value: float = 0.0
    infinite: bool = False

    @classmethod
    def finite(cls, value: float) -> "ExtendedReal":
        return cls(float(value), False)

    @classmethod
    def inf(cls) -> "ExtendedReal":
        return cls(0.0, True)

    @property
    def is_finite(self) -> bool:
        return not self.infinite

    def __float__(self) -> float:
        return math.inf if self.infinite else self.value

    def _key(self, other):
        return float(other) if isinstance(other, ExtendedReal) else float(other)

    def __eq__(self, other):
        if isinstance(other, ExtendedReal):
            return self.infinite == other.infinite and (self.infinite or self.value == other.value)
        return float(self) == other

    def __hash__(self):
        return hash((self.infinite, 0.0 if self.infinite else self.value))

    def __lt__(self, other):
        return float(self) < self._key(other)

    def __le__(self, other):
        return float(self) <= self._key(other)

    def __gt__(self, other):
        return float(self) > self._key(other)

    def __ge__(self, other):
        return float(self) >= self._key(other)

    def __add__(self, other):
        if isinstance(other, ExtendedReal):
            if self.infinite or other.infinite:
                return ExtendedReal.inf()
            return ExtendedReal.finite(self.value + other.value)
        return ExtendedReal.inf() if self.infinite else ExtendedReal.finite(self.value + float(other))

    __radd__ = __add__

    def __repr__(self):
        return "ExtendedReal(+inf)" if self.infinite else f"ExtendedReal({self.value!r})"


INF = ExtendedReal.inf()


def _vec(x, d: int | None = None, name: str = "x") -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if d is not None and x.shape[0] != d:
        raise ValueError(f"dimension mismatch: {name} has length {x.shape[0]}, expected {d}")
    return x


def _check_t(t: float) -> float:
    t = float(t)
    if not t >= 0:
        raise ValueError(f"perspective parameter must be nonnegative, got {t}")
    return t


@dataclass(frozen=True, eq=False)
class NormBall:
    """c(x) = ||x - center|| - radius."""

    norm: Norm
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "norm", Norm.parse(self.norm))
        c = _vec(self.center, name="center").copy()
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        r = float(self.radius)
        if not (r > 0 and math.isfinite(r)):
            raise ValueError(f"norm-ball radius must be positive and finite, got {self.radius}")
        if not np.all(np.isfinite(c)):
            raise ValueError("norm-ball center must be finite")
        object.__setattr__(self, "radius", r)

    @property
    def d(self) -> int:
        return self.center.shape[0]

    @property
    def is_linear(self) -> bool:
        return False

    def __call__(self, x) -> float:
        return norm(self.norm, _vec(x, self.d) - self.center) - self.radius

    def values(self, X) -> np.ndarray:
        """c at a batch of points (N, d)."""
        return np.linalg.norm(np.asarray(X) - self.center, ord=self.norm.ord, axis=-1) - self.radius

    def perspective(self, x, t: float) -> float:
        t = _check_t(t)
        return norm(self.norm, _vec(x, self.d) - t * self.center) - self.radius * t

    def conjugate(self, z) -> ExtendedReal:
        z = _vec(z, self.d, "z")
        if dual_norm(self.norm, z) <= 1.0:
            return ExtendedReal.finite(float(z @ self.center) + self.radius)
        return INF

    def perspective_conjugate(self, z, t: float) -> ExtendedReal:
        t = _check_t(t)
        z = _vec(z, self.d, "z")
        if dual_norm(self.norm, z) <= t:
            return ExtendedReal.finite(float(z @ self.center) + self.radius * t)
        return INF

    def to_dict(self) -> dict:
        return {"type": "norm_ball", "norm": self.norm.value, "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """c(x) = psi . x + omega."""

    psi: np.ndarray
    omega: float

    # exact-match tolerance for the measure-zero conjugate domain {psi}
    MATCH_TOL = 1e-9

    def __post_init__(self):
        psi = _vec(self.psi, name="psi").copy()
        if not np.any(psi != 0):
            raise ValueError("half-space normal psi must be nonzero")
        if not (np.all(np.isfinite(psi)) and math.isfinite(float(self.omega))):
            raise ValueError("half-space coefficients must be finite")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "omega", float(self.omega))

    @property
    def d(self) -> int:
        return self.psi.shape[0]

    @property
    def is_linear(self) -> bool:
        return True

    def __call__(self, x) -> float:
        return float(self.psi @ _vec(x, self.d)) + self.omega

    def values(self, X) -> np.ndarray:
        return np.asarray(X) @ self.psi + self.omega

    def perspective(self, x, t: float) -> float:
        t = _check_t(t)
        return float(self.psi @ _vec(x, self.d)) + self.omega * t

    def conjugate(self, z) -> ExtendedReal:
        z = _vec(z, self.d, "z")
        if np.max(np.abs(z - self.psi)) <= self.MATCH_TOL:
            return ExtendedReal.finite(-self.omega)
        return INF

    def perspective_conjugate(self, z, t: float) -> ExtendedReal:
        t = _check_t(t)
        z = _vec(z, self.d, "z")
        if np.max(np.abs(z - t * self.psi)) <= self.MATCH_TOL:
            return ExtendedReal.finite(-self.omega * t)
        return INF

    def to_dict(self) -> dict:
        return {"type": "half_space", "psi": self.psi.tolist(), "omega": self.omega}


ConstraintFn = Union[NormBall, HalfSpace]


def perspective_constraint(c: ConstraintFn, x, t: float) -> float:
    return c.perspective(x, t)


def conjugate_constraint(c: ConstraintFn, z) -> ExtendedReal:
    return c.conjugate(z)


def perspective_conjugate(c: ConstraintFn, z, t: float) -> ExtendedReal:
    return c.perspective_conjugate(z, t)


class UnboundedSetError(ValueError):
    pass


class InfeasibleSetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AttackSet:
    constraints: tuple

    def __init__(self, constraints: Sequence[ConstraintFn]):
        cons = tuple(constraints)
        if not cons:
            raise ValueError("an attack set needs at least one constraint")
        dims = {c.d for c in cons}
        if len(dims) != 1:
            raise ValueError(f"constraints disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "constraints", cons)

    @property
    def d(self) -> int:
        return self.constraints[0].d

    @property
    def is_polyhedral(self) -> bool:
        return all(isinstance(c, HalfSpace) for c in self.constraints)

    def __len__(self):
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)

    def values(self, X) -> np.ndarray:
        """Constraint values, shape (N, K) for a batch (N, d)."""
        return np.stack([c.values(X) for c in self.constraints], axis=-1)

    @classmethod
    def ball(cls, center, radius: float, norm: Norm | str = Norm.LINF) -> "AttackSet":
        return cls([NormBall(Norm.parse(norm), center, radius)])

    @classmethod
    def box(cls, lo, hi) -> "AttackSet":
        lo, hi = _vec(lo, name="lo"), _vec(hi, name="hi")
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box requires lo <= hi of equal length")
        return cls(box_halfspaces(lo, hi))

    def to_dict(self) -> dict:
        return {"d": self.d, "constraints": [c.to_dict() for c in self.constraints]}


def box_halfspaces(lo, hi) -> list[HalfSpace]:
    cons = []
    d = len(lo)
    for r in range(d):
        e = np.zeros(d)
        e[r] = 1.0
        cons.append(HalfSpace(e, -hi[r]))
        cons.append(HalfSpace(-e, lo[r]))
    return cons


def contains(X: AttackSet, x, tol: float = 1e-6) -> bool:
    x = _vec(x, X.d)
    return all(c(x) <= tol for c in X.constraints)


def contains_batch(X: AttackSet, points, tol: float = 1e-6) -> np.ndarray:
    return np.all(X.values(np.atleast_2d(points)) <= tol, axis=-1)


def add_membership(builder: conic.ConicBuilder, X: AttackSet, x_idx) -> None:
    """Constrain builder variables x_idx to lie in X (direct, non-perspective encoding)."""
    x_idx = np.asarray(x_idx)
    d = X.d
    for c in X.constraints:
        if isinstance(c, HalfSpace):
            builder.add_le(x_idx, c.psi, -c.omega)
        elif c.norm is Norm.L2:
            cone = builder.add_variable(d + 1)
            builder.add_soc(cone)
            builder.add_equality([cone[0]], [1.0], c.radius)
            for r in range(d):
                builder.add_equality([cone[1 + r], x_idx[r]], [1.0, -1.0], -c.center[r])
        elif c.norm is Norm.LINF:
            for r in range(d):
                builder.add_le([x_idx[r]], [1.0], c.center[r] + c.radius)
                builder.add_le([x_idx[r]], [-1.0], -(c.center[r] - c.radius))
        else:
            pos = builder.add_variable(d, nonneg=True)
            neg = builder.add_variable(d, nonneg=True)
            for r in range(d):
                builder.add_equality([x_idx[r], pos[r], neg[r]], [1.0, -1.0, 1.0], c.center[r])
            builder.add_le(np.concatenate([pos, neg]), 1.0, c.radius)


def coordinate_extremes(X: AttackSet, opts: conic.SolveOptions | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate (min, max) of x over X, by 2d conic solves.

    Entries are +-inf where the probe is unbounded. Raises
    :class:`InfeasibleSetError` if X is empty.
    """
    d = X.d
    lo, hi = np.empty(d), np.empty(d)
    for r in range(d):
        for sense, out in ((conic.Sense.MIN, lo), (conic.Sense.MAX, hi)):
            B = conic.ConicBuilder()
            x = B.add_variable(d)
            add_membership(B, X, x)
            B.set_objective([x[r]], [1.0], sense)
            sol = conic.solve(B.finalize(), opts)
            if sol.status is conic.Status.INFEASIBLE:
                raise InfeasibleSetError("attack set is empty")
            if sol.status is conic.Status.UNBOUNDED:
                out[r] = -np.inf if sense is conic.Sense.MIN else np.inf
            elif sol.ok:
                out[r] = sol.objective
            else:
                raise RuntimeError(f"coordinate probe failed ({sol.raw_status})")
    return lo, hi


def bounding_box(X: AttackSet) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box enclosing X (closed form for a lone ball, LP probes otherwise)."""
    if len(X) == 1 and isinstance(X.constraints[0], NormBall):
        c = X.constraints[0]
        return c.center - c.radius, c.center + c.radius
    return coordinate_extremes(X)


def verify_bounded(X: AttackSet) -> bool:
    """True when X is bounded.

    Any norm-ball constraint bounds X outright; a purely polyhedral X is
    probed with the 2d coordinate LPs.
    """
    if not X.is_polyhedral:
        return True
    lo, hi = coordinate_extremes(X)
    return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))


def constraint_from_dict(obj: dict, d: int | None = None) -> list[ConstraintFn]:
    kind = obj.get("type")
    try:
        if kind == "norm_ball":
            cons = [NormBall(Norm.parse(obj["norm"]), obj["center"], obj["radius"])]
        elif kind == "half_space":
            cons = [HalfSpace(obj["psi"], obj["omega"])]
        elif kind == "box":
            lo, hi = _vec(obj["lo"], name="lo"), _vec(obj["hi"], name="hi")
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ValueError("box requires lo <= hi of equal length")
            cons = box_halfspaces(lo, hi)
        else:
            raise ValueError(f"unknown constraint type {kind!r}")
    except KeyError as exc:
        raise ValueError(f"constraint of type {kind!r} is missing field {exc.args[0]!r}") from None
    if d is not None and any(c.d != d for c in cons):
        raise ValueError(f"constraint of type {kind!r} has dimension {cons[0].d}, expected {d}")
    return cons


def from_dict(obj: dict) -> AttackSet:
    if not isinstance(obj, dict) or "constraints" not in obj:
        raise ValueError("attack set must be an object with a 'constraints' list")
    d = obj.get("d")
    cons = []
    for k, item in enumerate(obj["constraints"]):
        try:
            cons.extend(constraint_from_dict(item, d))
        except ValueError as exc:
            raise ValueError(f"constraints[{k}]: {exc}") from None
    return AttackSet(cons)


def load_attack_set(path: str | PathLike) -> AttackSet:
    with open(path) as fh:
        return from_dict(json.load(fh))


def save_attack_set(X: AttackSet, path: str | PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(X.to_dict(), fh)
        fh.write("\n")
