"""Exact robustness certification of min-max affine models over convex attack sets."""

__version__ = "0.1.0"

from .attack_set import AttackSet, HalfSpace, Norm, NormBall, contains
from .certify import (CertificationResult, CertifyOptions, CertStatus, SlaterStatus, certified_accuracy,
                      certified_radius, certify, enumerate_oracle, prune_redundant)
from .convert import ReluNet1H, relu_to_minmax
from .model import MinMaxModel, evaluate, load_model, save_model

__all__ = [
    "AttackSet", "HalfSpace", "Norm", "NormBall", "contains",
    "CertificationResult", "CertifyOptions", "CertStatus", "SlaterStatus", "certified_accuracy",
    "certified_radius", "certify", "enumerate_oracle", "prune_redundant",
    "ReluNet1H", "relu_to_minmax",
    "MinMaxModel", "evaluate", "load_model", "save_model",
]
