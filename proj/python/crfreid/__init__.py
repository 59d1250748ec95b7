"""Python bindings for the crfreid C++ library."""

from ._crfreid import (
    CrfreidError,
    bhattacharyya_distance,
    euclidean_distance,
    evaluate,
    exact_filter,
    exact_joint_enumeration,
    gaussian_kernel,
    infer,
    infer_marginals,
    lattice_filter,
    learn_kernel_weights,
    max_f_score,
    project_to_simplex,
    synth,
    train,
    width_grid,
)

__all__ = [
    "CrfreidError",
    "bhattacharyya_distance",
    "euclidean_distance",
    "evaluate",
    "exact_filter",
    "exact_joint_enumeration",
    "gaussian_kernel",
    "infer",
    "infer_marginals",
    "lattice_filter",
    "learn_kernel_weights",
    "max_f_score",
    "project_to_simplex",
    "synth",
    "train",
    "width_grid",
]
