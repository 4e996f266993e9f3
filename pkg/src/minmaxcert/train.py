"""Subgradient training of min-max affine models and the PGD attack used for adversarial training."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from os import PathLike

import numpy as np

from .attack_set import Norm
from .model import MinMaxModel, active_indices, evaluate

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class AdversarialSchedule:
    start_radius: float = 0.001
    end_radius: float = 0.05
    ramp_epochs: int = 20
    steps: int = 10
    sensitive_only: bool = True

    def radius(self, epoch: int) -> float:
        if self.ramp_epochs <= 0:
            return self.end_radius
        frac = min(1.0, epoch / self.ramp_epochs)
        return self.start_radius + frac * (self.end_radius - self.start_radius)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 0.01
    batch_size: int = 64
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    loss: str = "mse"
    adversarial: AdversarialSchedule | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0, lr > 0 and batch_size >= 1")
        if self.loss not in ("mse", "logistic"):
            raise ValueError(f"unknown loss {self.loss!r}")
        adv = self.adversarial
        if adv is not None and adv.start_radius > adv.end_radius:
            raise ValueError("adversarial start_radius must not exceed end_radius")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if obj.get("adversarial") is not None:
            obj["adversarial"] = AdversarialSchedule(**obj["adversarial"])
        if "betas" in obj:
            obj["betas"] = tuple(obj["betas"])
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | PathLike) -> TrainConfig:
    with open(path) as fh:
        return TrainConfig.from_dict(json.load(fh))


def init_model(d: int, m: int, n: int, rng: np.random.Generator, out_range=(-1.0, 1.0)) -> MinMaxModel:
    """Slopes ~ N(0, 1/d); offsets uniform over the output range."""
    lo, hi = out_range
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    return MinMaxModel(rng.standard_normal((m, n, d)) / math.sqrt(d), rng.uniform(lo, hi, (m, n)))


class _Adam:
    def __init__(self, shapes, lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _loss_and_grad(a, b, X, t, loss):
    model_vals = np.einsum("ijk,nk->nij", a, X) + b
    js = np.argmax(model_vals, axis=2)
    comp = np.take_along_axis(model_vals, js[..., None], axis=2)[..., 0]
    i = np.argmin(comp, axis=1)
    rows = np.arange(len(X))
    j = js[rows, i]
    pred = comp[rows, i]
    if loss == "mse":
        r = pred - t
        value = float(np.mean(r * r))
        dpred = 2.0 * r / len(X)
    else:
        s = np.where(t > 0, 1.0, -1.0)
        margin = s * pred
        value = float(np.mean(np.logaddexp(0.0, -margin)))
        dpred = -s * np.exp(-np.logaddexp(0.0, margin)) / len(X)
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    np.add.at(ga, (i, j), dpred[:, None] * X)
    np.add.at(gb, (i, j), dpred)
    return value, ga, gb


def train(model_init: MinMaxModel, X, y, config: TrainConfig, history: list | None = None) -> MinMaxModel:
    """Minibatch Adam on the lowest-index active piece of each sample.

    For the logistic loss, targets > 0 mark the sensitive class (g >= 0).
    With an adversarial schedule, sensitive-class inputs are replaced by
    their PGD attack at the epoch's radius before each step.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(X) == 0:
        raise ValueError("empty dataset")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} inputs but {len(y)} targets")
    if X.shape[1] != model_init.d:
        raise ValueError(f"dimension mismatch: model d={model_init.d}, data d={X.shape[1]}")
    a = np.array(model_init.a)
    b = np.array(model_init.b)
    if config.epochs == 0:
        return model_init
    rng = np.random.default_rng(config.seed)
    opt = _Adam([a.shape, b.shape], config.lr, config.betas, config.adam_eps)
    adv = config.adversarial
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        radius = adv.radius(epoch) if adv is not None else 0.0
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = X[idx], y[idx]
            if adv is not None and radius > 0:
                mask = yb > 0 if adv.sensitive_only else np.ones(len(yb), dtype=bool)
                if np.any(mask):
                    xb = xb.copy()
                    cur = MinMaxModel(a, b)
                    sign = np.where(yb[mask] > 0, 1.0, -1.0)
                    xb[mask] = pgd_attack_batch(cur, xb[mask], radius, steps=adv.steps, direction=sign)
            value, ga, gb = _loss_and_grad(a, b, xb, yb, config.loss)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {start}")
            total += value * len(idx)
            opt.step([a, b], [ga, gb])
        epoch_loss = total / len(X)
        if history is not None:
            history.append(epoch_loss)
        log.info("epoch %d loss %.6g", epoch, epoch_loss)
    return MinMaxModel(a, b)


def loss(model: MinMaxModel, X, y, kind: str = "mse") -> float:
    return _loss_and_grad(np.asarray(model.a), np.asarray(model.b), np.atleast_2d(X), np.asarray(y, float), kind)[0]


def accuracy(model: MinMaxModel, X, y) -> float:
    """Sign agreement: prediction g >= 0 vs target > 0."""
    pred = evaluate(model, np.atleast_2d(X)) >= 0
    return float(np.mean(pred == (np.asarray(y) > 0)))


def pgd_attack_batch(model: MinMaxModel, centers, eps: float, steps: int = 10, step_size: float | None = None,
                     norm: Norm | str = Norm.LINF, direction=1.0) -> np.ndarray:
    """Projected subgradient descent on g over norm balls, one per row of ``centers``.

    ``direction`` = +1 drives g down, -1 drives it up (per row or scalar).
    Returns the best iterate seen, including the center itself.
    """
    norm = Norm.parse(norm)
    if norm is Norm.L1:
        raise ValueError("PGD supports the L2 and LInf balls")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    C = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if eps == 0 or steps <= 0:
        return C.copy()
    step = eps / 4 if step_size is None else step_size
    sgn = np.broadcast_to(np.asarray(direction, dtype=np.float64), (len(C),))
    x = C.copy()
    best = C.copy()
    best_val = sgn * evaluate(model, C)
    for _ in range(steps):
        i, j = active_indices(model, x)
        g = model.a[i, j] * sgn[:, None]
        if norm is Norm.LINF:
            x = np.clip(x - step * np.sign(g), C - eps, C + eps)
        else:
            gn = np.linalg.norm(g, axis=1, keepdims=True)
            x = x - step * np.divide(g, gn, out=np.zeros_like(g), where=gn > 0)
            delta = x - C
            dn = np.linalg.norm(delta, axis=1, keepdims=True)
            x = C + delta * np.minimum(1.0, eps / np.maximum(dn, 1e-300))
        val = sgn * evaluate(model, x)
        better = val < best_val
        best[better] = x[better]
        best_val = np.where(better, val, best_val)
    return best


def pgd_attack(model: MinMaxModel, center, eps: float, norm: Norm | str = Norm.LINF, steps: int = 10,
               step_size: float | None = None) -> np.ndarray:
    """Local search for a point of the eps-ball around ``center`` with small g."""
    return pgd_attack_batch(model, np.asarray(center, dtype=np.float64)[None, :], eps, steps, step_size, norm)[0]
