"""Intersection crossing: double-integrator simulation, braking expert, imitation policy and its certification.

The ego vehicle drives north along y and the uncontrolled vehicle east along
x, both crossing the square intersection |x|, |y| < 3/4. Positions are
vehicle centers. The policy is trained on pi = -u, so certifying
min_X pi > 0 proves that the imitated controller always brakes on X.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from os import PathLike

import numpy as np

from .attack_set import AttackSet
from .certify import CertifyOptions, certify, enumerate_oracle, prune_redundant
from .model import MinMaxModel, save_model
from .train import TrainConfig, init_model, train

log = logging.getLogger(__name__)

# Shipped seed: the policy trained from it certifies min_X pi > 0.
DEMO_SEED = 24


@dataclass(frozen=True)
class VehicleState:
    x: float
    xdot: float
    y: float
    ydot: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("state must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.xdot, self.y, self.ydot], dtype=np.float64)

    @classmethod
    def from_array(cls, v) -> "VehicleState":
        return cls(*(float(t) for t in v))


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    steps: int = 100
    delta: float = 0.1
    u_max: float = 1.0
    half_width: float = 0.75
    length: float = 1.0
    width: float = 0.5
    init_lo: tuple = (-3.0, 0.5, -3.0, 0.0)
    init_hi: tuple = (-2.0, 2.5, -2.0, 2.0)

    def __post_init__(self):
        if min(self.dt, self.delta, self.u_max, self.half_width, self.length, self.width) <= 0 or self.steps < 1:
            raise ValueError("simulation parameters must be positive")

    @property
    def y_stop(self) -> float:
        return -self.half_width - self.delta

    @property
    def release_tail(self) -> float:
        """The expert goes once the eastbound tail passes this abscissa."""
        return self.half_width + self.delta

    def attack_box(self) -> tuple[np.ndarray, np.ndarray]:
        """States approaching or in the intersection, kept delta inside the initial ranges."""
        dl = self.delta
        lo = np.array([self.init_lo[0] + dl, self.init_lo[1] + dl, self.init_lo[2] + dl, self.init_lo[3] + dl])
        hi = np.array([self.half_width, self.init_hi[1] - dl, -self.half_width, self.init_hi[3] - dl])
        return lo, hi


def step_batch(S: np.ndarray, u, dt: float, u_max: float = 1.0) -> np.ndarray:
    """Advance states (N, 4) by one exact double-integrator step under clamped input."""
    acc = np.clip(u, -u_max, u_max)
    out = np.array(S, dtype=np.float64, copy=True)
    out[..., 0] = S[..., 0] + S[..., 1] * dt
    out[..., 2] = S[..., 2] + S[..., 3] * dt + 0.5 * acc * dt * dt
    out[..., 3] = S[..., 3] + acc * dt
    return out


def step(state: VehicleState, u: float, dt: float = 0.05, u_max: float = 1.0) -> VehicleState:
    return VehicleState.from_array(step_batch(state.as_array(), u, dt, u_max))


def expert_batch(S: np.ndarray, config: SimConfig = SimConfig()) -> np.ndarray:
    """Stop delta before the intersection at constant deceleration, wait, then go at full throttle."""
    S = np.atleast_2d(S)
    x, y, yd = S[:, 0], S[:, 2], S[:, 3]
    gap = config.y_stop - y
    with np.errstate(divide="ignore", invalid="ignore"):
        brake = np.where(gap > 0, -yd * yd / (2 * gap), -config.u_max)
    u = np.where(yd <= 0, 0.0, brake)
    u = np.where(x - config.length / 2 > config.release_tail, config.u_max, u)
    return np.clip(u, -config.u_max, config.u_max)


def expert_policy(state: VehicleState, config: SimConfig = SimConfig()) -> float:
    """Expert acceleration; an ego already past the stop line keeps braking at the limit."""
    return float(expert_batch(state.as_array()[None, :], config)[0])


def in_collision(S: np.ndarray, config: SimConfig = SimConfig()) -> np.ndarray:
    S = np.atleast_2d(S)
    return (np.abs(S[:, 0]) < config.half_width) & (np.abs(S[:, 2]) < config.half_width)


@dataclass
class Trajectories:
    states: np.ndarray  # (N, T, 4), NaN after a stop
    inputs: np.ndarray  # (N, T)
    lengths: np.ndarray  # (N,)
    collided: np.ndarray  # (N,) bool

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        """Visited (state, expert input) pairs of all trajectories."""
        mask = ~np.isnan(self.inputs)
        return self.states[mask], self.inputs[mask]


def can_stop(S: np.ndarray, config: SimConfig = SimConfig()) -> np.ndarray:
    """Whether the ego can halt at the stop line within the input bound."""
    S = np.atleast_2d(S)
    return S[:, 3] ** 2 <= 2 * config.u_max * (config.y_stop - S[:, 2])


def sample_initial(rng: np.random.Generator, count: int, config: SimConfig = SimConfig()) -> np.ndarray:
    """Uniform draws from the initial box, rejecting egos too fast to stop before the intersection."""
    out = np.empty((0, 4))
    while len(out) < count:
        S = rng.uniform(config.init_lo, config.init_hi, size=(2 * count, 4))
        out = np.vstack([out, S[can_stop(S, config)]])
    return out[:count]


def simulate_expert(rng: np.random.Generator, count: int, config: SimConfig = SimConfig()) -> Trajectories:
    """Roll out ``count`` expert trajectories from uniform initial states; a rollout stops on collision."""
    S = sample_initial(rng, count, config)
    states = np.full((count, config.steps, 4), np.nan)
    inputs = np.full((count, config.steps), np.nan)
    alive = np.ones(count, dtype=bool)
    collided = np.zeros(count, dtype=bool)
    lengths = np.zeros(count, dtype=np.int64)
    for t in range(config.steps):
        hit = alive & in_collision(S, config)
        collided |= hit
        alive &= ~hit
        if not alive.any():
            break
        u = expert_batch(S, config)
        states[alive, t] = S[alive]
        inputs[alive, t] = u[alive]
        lengths[alive] += 1
        S = step_batch(S, u, config.dt, config.u_max)
    return Trajectories(states, inputs, lengths, collided)


def slice_model(model: MinMaxModel, y: float, ydot: float) -> MinMaxModel:
    """Restriction of a state-space model to fixed ego coordinates, as a function of (x, xdot)."""
    a = np.asarray(model.a)
    return MinMaxModel(a[..., :2], model.b + a[..., 2] * y + a[..., 3] * ydot)


def sweep(policy: MinMaxModel, config: SimConfig = SimConfig(), grid: int = 20,
          opts: CertifyOptions | None = None) -> np.ndarray:
    """Rows (y, ydot, worst_u): the largest u = -pi over the eastbound part of the attack box."""
    lo, hi = config.attack_box()
    ys = np.linspace(lo[2], hi[2], grid)
    yds = np.linspace(lo[3], hi[3], grid)
    X2 = AttackSet.box(lo[:2], hi[:2])
    rows = []
    for y in ys:
        for yd in yds:
            res = certify(slice_model(policy, y, yd), X2, opts)
            if not np.isfinite(res.lower):
                raise RuntimeError(f"slice certification failed at y={y}, ydot={yd}: {res.diagnostics}")
            rows.append((y, yd, -res.lower))
    return np.array(rows)


def slice_oracle(policy: MinMaxModel, y: float, ydot: float, config: SimConfig = SimConfig()) -> float:
    lo, hi = config.attack_box()
    return -enumerate_oracle(slice_model(policy, y, ydot), AttackSet.box(lo[:2], hi[:2]))


def monotonicity_violations(rows: np.ndarray, tol: float = 1e-6) -> int:
    """Grid neighbours where a closer or faster ego gets a larger (less braking) worst-case u."""
    ys = np.unique(rows[:, 0])
    yds = np.unique(rows[:, 1])
    W = rows[:, 2].reshape(len(ys), len(yds))
    return int(np.sum(np.diff(W, axis=0) > tol) + np.sum(np.diff(W, axis=1) > tol))


def write_sweep_csv(rows: np.ndarray, path: str | PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "ydot", "worst_u"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


@dataclass
class DemoReport:
    seed: int
    trajectories: int
    samples: int
    collisions: int
    final_loss: float
    status: str
    min_pi: float
    worst_u: float
    attack: list | None
    sweep_max_u: float
    monotonicity_violations: int
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Everything but the wall-clock timings, so that reruns serialize identically."""
        out = asdict(self)
        del out["timings"]
        return out


def default_train_config(seed: int) -> TrainConfig:
    return TrainConfig(epochs=20, lr=0.01, batch_size=64, seed=seed, loss="mse")


def train_policy(seed: int, config: SimConfig = SimConfig(), train_config: TrainConfig | None = None,
                 count: int = 500, m: int = 10, n: int = 10):
    """Expert rollouts and the imitation policy pi ~ -u; returns (policy, trajectories, loss history)."""
    rng = np.random.default_rng(seed)
    traj = simulate_expert(rng, count, config)
    S, U = traj.samples()
    target = -U
    tc = train_config or default_train_config(seed)
    init = init_model(4, m, n, rng, (float(target.min()), float(target.max())))
    history: list = []
    policy = train(init, S, target, tc, history)
    return policy, traj, history


def run_demo(seed: int = DEMO_SEED, config: SimConfig = SimConfig(), train_config: TrainConfig | None = None,
             grid: int = 20, out_dir: str | PathLike | None = None, count: int = 500) -> DemoReport:
    """Train, certify min_X pi > 0 and compute the worst-case braking sweep."""
    t0 = time.perf_counter()
    policy, traj, history = train_policy(seed, config, train_config, count)
    t1 = time.perf_counter()
    lo, hi = config.attack_box()
    res = certify(policy, AttackSet.box(lo, hi))
    t2 = time.perf_counter()
    rows = sweep(prune_redundant(policy)[0], config, grid)
    t3 = time.perf_counter()
    report = DemoReport(
        seed=seed,
        trajectories=count,
        samples=int(traj.lengths.sum()),
        collisions=int(traj.collided.sum()),
        final_loss=float(history[-1]) if history else float("nan"),
        status=res.status.value,
        min_pi=float(res.p_star),
        worst_u=float(-res.p_star),
        attack=None if res.attack is None else [float(v) for v in res.attack],
        sweep_max_u=float(rows[:, 2].max()),
        monotonicity_violations=monotonicity_violations(rows),
        timings={"train": t1 - t0, "certify": t2 - t1, "sweep": t3 - t2},
    )
    if report.monotonicity_violations:
        log.warning("sweep is not monotone at %d grid neighbours", report.monotonicity_violations)
    if out_dir is not None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(policy, out / "policy.json")
        write_sweep_csv(rows, out / "sweep.csv")
        with open(out / "report.json", "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        with open(out / "timings.json", "w") as fh:
            json.dump(report.timings, fh, indent=2, sort_keys=True)
    return report

