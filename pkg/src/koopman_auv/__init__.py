"""Koopman/EDMD identification and constrained MPC of AUV surge speed."""

from .edmd import Dataset, KoopmanEDMD, LiftedModel, collect_dataset, fit, predict_trajectory
from .lifting import Dictionary, RBFLifting, lift, make_dictionary, project
from .mpc import KoopmanMPC, MpcConfig, augment, build_qp, solve_qp
from .plant import PlantParams, rk4_step, simulate

__all__ = [
    "Dataset",
    "Dictionary",
    "KoopmanEDMD",
    "KoopmanMPC",
    "LiftedModel",
    "MpcConfig",
    "PlantParams",
    "RBFLifting",
    "augment",
    "build_qp",
    "collect_dataset",
    "fit",
    "lift",
    "make_dictionary",
    "predict_trajectory",
    "project",
    "rk4_step",
    "simulate",
    "solve_qp",
]

__version__ = "0.1.0"
