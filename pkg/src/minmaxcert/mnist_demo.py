"""3-vs-8 digit classification: adversarial training, certified accuracy curve and certified radii.

Runs on IDX files (MNIST layout) when given, otherwise on the 8x8 digits
bundled with scikit-learn. Class 3 is the sensitive class: g >= 0 predicts 3.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from os import PathLike
from pathlib import Path

import numpy as np

from .attack_set import AttackSet, Norm
from .certify import CertifyOptions, CertStatus, certified_accuracy, certified_radius, certify, prune_redundant
from .datasets import LabeledSet, downsample, filter_binary, load_digits_3v8, load_idx, train_test_split
from .model import MinMaxModel, evaluate, save_model
from .train import AdversarialSchedule, TrainConfig, accuracy, init_model, train

log = logging.getLogger(__name__)

DEMO_SEED = 0
EPS_GRID = tuple(round(0.01 * k, 2) for k in range(11))


def load_data(images=None, labels=None, factor=None) -> LabeledSet:
    """3-vs-8 data; IDX files are pooled by ``factor`` (default (2, 4): 28x28 -> 14x7, d = 98)."""
    if images is not None:
        if labels is None:
            raise ValueError("IDX images need a matching labels file")
        data = filter_binary(load_idx(images, labels), 3, 8)
        return downsample(data, factor or (2, 4))
    data = load_digits_3v8()
    return downsample(data, factor) if factor else data


def demo_train_config(seed: int) -> TrainConfig:
    return TrainConfig(epochs=30, lr=0.01, batch_size=32, seed=seed, loss="logistic",
                       adversarial=AdversarialSchedule(start_radius=0.001, end_radius=0.05, ramp_epochs=20))


def train_classifier(data: LabeledSet, seed: int, m: int = 15, n: int = 15,
                     config: TrainConfig | None = None) -> MinMaxModel:
    rng = np.random.default_rng(seed)
    init = init_model(data.d, m, n, rng)
    return train(init, data.points, data.signed_targets(), config or demo_train_config(seed))


def accuracy_curve(model: MinMaxModel, test: LabeledSet, eps_grid=EPS_GRID, norm=Norm.LINF,
                   jobs: int = 1) -> list[dict]:
    pruned = prune_redundant(model)[0]
    opts = CertifyOptions(prune=False)
    return [{"eps": float(e),
             "certified_accuracy": certified_accuracy(pruned, test.points, test.labels, e, test.sensitive_label,
                                                      norm, opts, jobs)}
            for e in eps_grid]


def clean_sensitive_accuracy(model: MinMaxModel, test: LabeledSet) -> float:
    sel = test.labels == test.sensitive_label
    return float(np.mean(evaluate(model, test.points[sel]) >= 0)) if sel.any() else 0.0


def radius_check(model: MinMaxModel, center, tol: float = 1e-3, eps_max: float = 0.5) -> dict:
    """certified_radius and the two probes around it: certified at r, falsified at r + 2 tol."""
    r = certified_radius(model, center, Norm.LINF, eps_max, tol)
    at = certify(model, AttackSet.ball(center, r, Norm.LINF)).status if r > 0 else CertStatus.CERTIFIED
    beyond = certify(model, AttackSet.ball(center, r + 2 * tol, Norm.LINF)).status
    return {"radius": r, "at_radius": at.value, "beyond_radius": beyond.value}


def run_mnist_demo(seed: int = DEMO_SEED, images=None, labels=None, downsample=None, eps_grid=EPS_GRID,
                   out_dir: str | PathLike | None = None, max_test: int | None = None, radius_points: int = 3,
                   jobs: int = 1) -> dict:
    t0 = time.perf_counter()
    data = load_data(images, labels, downsample)
    train_set, test = train_test_split(data, 0.3, seed)
    if max_test is not None:
        sens = np.flatnonzero(test.labels == test.sensitive_label)[:max_test]
        test = test.subset(sens)
    model = train_classifier(train_set, seed)
    t1 = time.perf_counter()
    sens_pts = test.points[test.labels == test.sensitive_label]
    probe = sens_pts[0] if len(sens_pts) else test.points[0]
    tc = time.perf_counter()
    single = certify(model, AttackSet.ball(probe, 0.05, Norm.LINF))
    single_seconds = time.perf_counter() - tc
    curve = accuracy_curve(model, test, eps_grid, jobs=jobs)
    t2 = time.perf_counter()
    correct = [p for p in sens_pts if evaluate(model, p) >= 0][:radius_points]
    radii = [radius_check(model, p) for p in correct]
    report = {
        "seed": seed,
        "d": data.d,
        "train_size": len(train_set),
        "test_sensitive": int(np.sum(test.labels == test.sensitive_label)),
        "train_accuracy": accuracy(model, train_set.points, train_set.signed_targets()),
        "clean_sensitive_accuracy": clean_sensitive_accuracy(model, test),
        "single_certify": {"status": single.status.value, "p_star": single.p_star},
        "curve": curve,
        "radii": radii,
    }
    timings = {"train": t1 - t0, "single_certify": single_seconds, "curve": t2 - t1, "radii": time.perf_counter() - t2}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(model, out / "classifier.json")
        with open(out / "accuracy_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "certified_accuracy"])
            for row in curve:
                w.writerow([repr(row["eps"]), repr(row["certified_accuracy"])])
        # wall-clock numbers live apart from the report so that reruns reproduce report.json exactly
        with open(out / "report.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        with open(out / "timings.json", "w") as fh:
            json.dump(timings, fh, indent=2, sort_keys=True)
    return report | {"timings": timings}
