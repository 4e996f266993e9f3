"""Exact conversion of one-hidden-layer ReLU networks to min-max affine form.

Split f(x) = w2 . relu(W1 x + b1) + b2 by the sign of the output weights:
f = p - q with p = b2 + sum_{w>0} w relu(l_k) and q = sum_{w<0} |w| relu(l_k).
Both are maxima over subsets of active units, so

    f(x) = min_{T subset N} max_{S subset P} (b2 + sum_{k in S u T} w_k l_k(x)).

The representation has 2^|N| min-components and 2^|P| pieces each.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from os import PathLike

import numpy as np

from .model import MinMaxModel

DEFAULT_CAP = 14


class ConversionTooLarge(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReluNet1H:
    """f(x) = w2 . relu(W1 x + b1) + b2."""

    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def __post_init__(self):
        W1 = np.atleast_2d(np.asarray(self.W1, dtype=np.float64))
        b1 = np.atleast_1d(np.asarray(self.b1, dtype=np.float64))
        w2 = np.atleast_1d(np.asarray(self.w2, dtype=np.float64))
        h = W1.shape[0]
        if h < 1 or W1.shape[1] < 1:
            raise ValueError(f"W1 must be h x d with h, d >= 1, got {W1.shape}")
        if b1.shape != (h,) or w2.shape != (h,):
            raise ValueError(f"b1 and w2 must have length h={h}")
        if not all(np.all(np.isfinite(v)) for v in (W1, b1, w2)) or not np.isfinite(self.b2):
            raise ValueError("network weights must be finite")
        for name, v in (("W1", W1), ("b1", b1), ("w2", w2)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "b2", float(self.b2))

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def h(self) -> int:
        return self.W1.shape[0]

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        out = np.maximum(x @ self.W1.T + self.b1, 0.0) @ self.w2 + self.b2
        return float(out) if np.ndim(out) == 0 else out

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, h: int) -> "ReluNet1H":
        return cls(rng.standard_normal((h, d)), rng.standard_normal(h), rng.standard_normal(h), rng.standard_normal())

    def to_dict(self) -> dict:
        return {"d": self.d, "h": self.h, "W1": self.W1.tolist(), "b1": self.b1.tolist(),
                "w2": self.w2.tolist(), "b2": self.b2}

    @classmethod
    def from_dict(cls, obj: dict) -> "ReluNet1H":
        for key in ("W1", "b1", "w2", "b2"):
            if key not in obj:
                raise ValueError(f"field {key!r}: missing")
        net = cls(obj["W1"], obj["b1"], obj["w2"], obj["b2"])
        if "d" in obj and obj["d"] != net.d:
            raise ValueError(f"field 'd': declared {obj['d']}, W1 has {net.d} columns")
        if "h" in obj and obj["h"] != net.h:
            raise ValueError(f"field 'h': declared {obj['h']}, W1 has {net.h} rows")
        return net


def load_net(path: str | PathLike) -> ReluNet1H:
    with open(path) as fh:
        return ReluNet1H.from_dict(json.load(fh))


def _subset_masks(k: int) -> np.ndarray:
    """Row s is the bit pattern of s (lowest bit = first unit), s = 0 .. 2^k - 1."""
    s = np.arange(2**k, dtype=np.int64)[:, None]
    return ((s >> np.arange(k)) & 1).astype(np.float64)


def relu_to_minmax(net: ReluNet1H, cap: int = DEFAULT_CAP) -> MinMaxModel:
    """Min-max affine model equal to ``net`` everywhere.

    Units with zero output weight are dropped first. Raises
    :class:`ConversionTooLarge` when either sign class exceeds ``cap`` units.
    """
    pos = np.flatnonzero(net.w2 > 0)
    neg = np.flatnonzero(net.w2 < 0)
    if len(pos) > cap or len(neg) > cap:
        raise ConversionTooLarge(
            f"conversion would need 2^{len(neg)} x 2^{len(pos)} = {2 ** len(neg) * 2 ** len(pos)} affine pieces "
            f"(cap is {cap} units per sign)")
    # scaled hidden units w_k * (W1_k x + b1_k)
    slope = net.w2[:, None] * net.W1
    offset = net.w2 * net.b1
    S = _subset_masks(len(pos))
    T = _subset_masks(len(neg))
    a_p, b_p = S @ slope[pos], S @ offset[pos] + net.b2
    a_q, b_q = T @ slope[neg], T @ offset[neg]
    a = a_q[:, None, :] + a_p[None, :, :]
    b = b_q[:, None] + b_p[None, :]
    return MinMaxModel(a, b)
