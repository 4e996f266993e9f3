"""Min-max affine functions g(x) = min_i max_j (a_ij . x + b_ij).

The coefficients live in a (m, n, d) slope tensor and an (m, n) offset
matrix. Every min-component shares the same number of max-pieces; ragged
inputs go through :func:`normalize_components` first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from os import PathLike
from typing import Sequence

import numpy as np


class ModelFormatError(ValueError):
    """Raised when a serialized model is malformed or has inconsistent shapes."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"field {field!r}: {message}")


@dataclass(frozen=True)
class EvalTrace:
    value: float
    argmin_i: int
    argmax_j: int


@dataclass(frozen=True, eq=False)
class MinMaxModel:
    """Coefficients of a min-max affine function.

    Attributes:
        a: slopes, shape (m, n, d).
        b: offsets, shape (m, n).
    """

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        if a.ndim != 3:
            raise ModelFormatError("a", f"expected a 3-d array (m, n, d), got shape {a.shape}")
        m, n, d = a.shape
        if m < 1 or n < 1 or d < 1:
            raise ModelFormatError("a", f"all of m, n, d must be >= 1, got {a.shape}")
        if b.shape != (m, n):
            raise ModelFormatError("b", f"expected shape {(m, n)}, got {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ModelFormatError("a" if not np.all(np.isfinite(a)) else "b", "non-finite entry")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def d(self) -> int:
        return self.a.shape[2]

    def __call__(self, x):
        return evaluate(self, x)

    def component(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Slopes (n, d) and offsets (n,) of the convex component g_i."""
        return self.a[i], self.b[i]

    def lipschitz(self, ord=2) -> float:
        """max_ij ||a_ij|| in the given vector norm."""
        return float(np.max(np.linalg.norm(self.a, ord=ord, axis=-1)))

    @classmethod
    def constant(cls, value: float, d: int) -> "MinMaxModel":
        return cls(np.zeros((1, 1, d)), np.full((1, 1), float(value)))

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, m: int, n: int, scale: float = 1.0) -> "MinMaxModel":
        return cls(scale * rng.standard_normal((m, n, d)), scale * rng.standard_normal((m, n)))


def _check_point(model: MinMaxModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (model.d,):
        raise ValueError(f"dimension mismatch: model has d={model.d}, input has shape {x.shape}")
    return x


def piece_values(model: MinMaxModel, x) -> np.ndarray:
    """All affine piece values; shape (..., m, n) for x of shape (..., d)."""
    x = _check_point(model, x)
    return np.einsum("ijk,...k->...ij", model.a, x) + model.b


def evaluate(model: MinMaxModel, x) -> float | np.ndarray:
    """g(x); x may be a single point (d,) or a batch (N, d)."""
    vals = piece_values(model, x)
    out = vals.max(axis=-1).min(axis=-1)
    return float(out) if out.ndim == 0 else out


def evaluate_trace(model: MinMaxModel, x) -> EvalTrace:
    """g(x) together with the lowest-index active (i, j)."""
    vals = piece_values(model, x)
    if vals.ndim != 2:
        raise ValueError("evaluate_trace takes a single point")
    comp = vals.max(axis=1)
    i = int(np.argmin(comp))
    j = int(np.argmax(vals[i]))
    return EvalTrace(float(vals[i, j]), i, j)


def active_indices(model: MinMaxModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Lowest-index active (i, j) for a batch of points (N, d)."""
    vals = piece_values(model, np.atleast_2d(x))
    js = np.argmax(vals, axis=2)
    comp = np.take_along_axis(vals, js[..., None], axis=2)[..., 0]
    i = np.argmin(comp, axis=1)
    j = js[np.arange(len(i)), i]
    return i, j


def perspective_component(model: MinMaxModel, i: int, x, t: float) -> float:
    """Perspective of g_i at (x, t): max_j (a_ij . x + b_ij t).

    Equals t g_i(x / t) for t > 0; at t = 0 it is the recession function max_j a_ij . x.
    """
    t = float(t)
    if not t >= 0:
        raise ValueError(f"perspective parameter must be nonnegative, got {t}")
    x = _check_point(model, x)
    return float(np.max(model.a[i] @ x + model.b[i] * t))


def subgradient(model: MinMaxModel, x) -> np.ndarray:
    """Slope a_{i*j*} of the lowest-index active piece at x."""
    tr = evaluate_trace(model, _check_point(model, x))
    return model.a[tr.argmin_i, tr.argmax_j].copy()


def normalize_components(components: Sequence[tuple]) -> MinMaxModel:
    """Pad ragged components to a common number of pieces.

    ``components`` is a sequence of ``(a_i, b_i)`` with ``a_i`` of shape
    (n_i, d) and ``b_i`` of shape (n_i,). Missing pieces of g_i are filled
    with the affine minorant v_i . x + g_i(0), where v_i is the slope of the
    lowest-index piece attaining max_j b_ij; g is unchanged pointwise.
    """
    comps = []
    d = None
    for idx, (ai, bi) in enumerate(components):
        ai = np.atleast_2d(np.asarray(ai, dtype=np.float64))
        bi = np.atleast_1d(np.asarray(bi, dtype=np.float64))
        if ai.shape[0] == 0:
            raise ModelFormatError("a", f"component {idx} has no pieces")
        if bi.shape != (ai.shape[0],):
            raise ModelFormatError("b", f"component {idx}: {bi.shape} offsets for {ai.shape[0]} slopes")
        if d is None:
            d = ai.shape[1]
        elif ai.shape[1] != d:
            raise ModelFormatError("a", f"component {idx} has dimension {ai.shape[1]}, expected {d}")
        comps.append((ai, bi))
    if not comps:
        raise ModelFormatError("a", "no components")
    n = max(ai.shape[0] for ai, _ in comps)
    a = np.empty((len(comps), n, d))
    b = np.empty((len(comps), n))
    for i, (ai, bi) in enumerate(comps):
        k = ai.shape[0]
        a[i, :k], b[i, :k] = ai, bi
        star = int(np.argmax(bi))
        a[i, k:] = ai[star]
        b[i, k:] = bi[star]
    return MinMaxModel(a, b)


def to_dict(model: MinMaxModel) -> dict:
    return {"d": model.d, "m": model.m, "n": model.n, "a": model.a.tolist(), "b": model.b.tolist()}


def from_dict(obj: dict) -> MinMaxModel:
    if not isinstance(obj, dict):
        raise ModelFormatError("<root>", "expected a JSON object")
    for key in ("d", "m", "n", "a", "b"):
        if key not in obj:
            raise ModelFormatError(key, "missing")
    dims = {}
    for key in ("d", "m", "n"):
        val = obj[key]
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise ModelFormatError(key, f"expected a positive integer, got {val!r}")
        dims[key] = val
    m, n, d = dims["m"], dims["n"], dims["d"]
    try:
        a = np.array(obj["a"], dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise ModelFormatError("a", f"not a rectangular numeric array ({exc})") from None
    if a.shape != (m, n, d):
        raise ModelFormatError("a", f"expected shape {(m, n, d)}, got {a.shape}")
    try:
        b = np.array(obj["b"], dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise ModelFormatError("b", f"not a rectangular numeric array ({exc})") from None
    if b.shape != (m, n):
        raise ModelFormatError("b", f"expected shape {(m, n)}, got {b.shape}")
    return MinMaxModel(a, b)


def save_model(model: MinMaxModel, path: str | PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(model), fh)
        fh.write("\n")


def load_model(path: str | PathLike) -> MinMaxModel:
    with open(path) as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError("<root>", f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(obj)
