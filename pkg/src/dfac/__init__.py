"""Distributional value-function factorization for cooperative multi-agent RL.

Expected factorizations (additive, monotonic, duplex dueling) and their
distributional variants built from a mean-shape decomposition: the expected
mixer carries the mean, a non-learnable zero-mean shape function carries the
higher moments (quantile mixture for implicit quantile heads, projected
convolution for categorical heads).
"""

from .distributions import (
    CategoricalDist,
    MeanShape,
    NormalSpec,
    QuantileBatch,
    convolve_many_projected,
    convolve_pmf,
    expectation,
    mean_shape_decompose,
    normal_quantile,
    project_categorical,
    quantile_eval,
    quantile_mixture,
    wasserstein,
)
from .envs import MatrixGameSpec, benchmark_spec, ground_truth, load_spec, reset, step
from .mixers import check_digm, dfac_mix, dfac_mix_c51, mix_qmix, mix_qplex, mix_vdn, shape_sum
from .training import METHODS, TrainConfig, default_config, train

__all__ = [
    "CategoricalDist", "MeanShape", "NormalSpec", "QuantileBatch",
    "convolve_many_projected", "convolve_pmf", "expectation",
    "mean_shape_decompose", "normal_quantile", "project_categorical",
    "quantile_eval", "quantile_mixture", "wasserstein",
    "MatrixGameSpec", "benchmark_spec", "ground_truth", "load_spec", "reset", "step",
    "check_digm", "dfac_mix", "dfac_mix_c51", "mix_qmix", "mix_qplex", "mix_vdn",
    "shape_sum",
    "METHODS", "TrainConfig", "default_config", "train",
]

__version__ = "0.1.0"
