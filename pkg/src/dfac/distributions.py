"""Return-distribution representations and their algebra.

Categorical PMFs on a finite support, quantile-sample batches, exact and
projected PMF convolution (direct and FFT), quantile mixtures, mean-shape
decomposition, p-Wasserstein distances on a midpoint quantile grid, and a
dependency-free normal inverse CDF used as analytic ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASS_TOL = 1e-12
ATOM_MERGE_TOL = 1e-12


# ---------------------------------------------------------------------------
# representations
# ---------------------------------------------------------------------------

@dataclass
class CategoricalDist:
    """Finite-support distribution: strictly increasing atoms with a PMF."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.atoms.ndim != 1 or self.atoms.shape != self.probs.shape:
            raise ValueError("categorical: atoms and probs must be equal-length 1-D")
        if self.atoms.size == 0:
            raise ValueError("categorical: empty support")
        if np.any(np.diff(self.atoms) <= 0):
            raise ValueError("categorical: atoms must be strictly increasing")
        if np.any(self.probs < -MASS_TOL):
            raise ValueError("categorical: negative probability")
        total = self.probs.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"categorical: probabilities sum to {total}, not 1")

    def mean(self) -> float:
        return float(self.atoms @ self.probs)

    def quantile(self, levels) -> np.ndarray:
        """Left-continuous step quantile: inf{x : level <= F(x)}."""
        levels = np.asarray(levels, dtype=np.float64)
        if np.any((levels < 0) | (levels > 1)):
            raise ValueError("quantile level outside [0, 1]")
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, levels - 1e-15, side="left")
        return self.atoms[np.minimum(idx, self.atoms.size - 1)]

    def to_json(self) -> dict:
        return {"atoms": self.atoms.tolist(), "probs": self.probs.tolist()}


@dataclass
class QuantileBatch:
    """Paired (quantile level, value) samples of an inverse CDF."""

    levels: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.levels.ndim != 1 or self.levels.shape != self.values.shape:
            raise ValueError("quantile batch: levels and values must be equal-length 1-D")
        if self.levels.size == 0:
            raise ValueError("quantile batch: empty")
        if np.any((self.levels < 0) | (self.levels > 1)):
            raise ValueError("quantile batch: levels outside [0, 1]")

    def mean(self) -> float:
        return float(self.values.mean())

    def quantile(self, levels) -> np.ndarray:
        """Step interpolation through the stored samples (sorted by level)."""
        levels = np.asarray(levels, dtype=np.float64)
        if np.any((levels < 0) | (levels > 1)):
            raise ValueError("quantile level outside [0, 1]")
        order = np.argsort(self.levels, kind="stable")
        ls, vs = self.levels[order], self.values[order]
        idx = np.minimum(np.searchsorted(ls, levels, side="left"), ls.size - 1)
        return vs[idx]

    def to_json(self) -> dict:
        return {"levels": self.levels.tolist(), "values": self.values.tolist()}


@dataclass
class NormalSpec:
    """N(mean, std^2); std = 0 denotes a point mass."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("normal: std must be >= 0")

    def quantile(self, levels) -> np.ndarray:
        return normal_quantile(self, levels)


@dataclass
class MeanShape:
    """Decomposition Z = mean + shape with a zero-mean shape part."""

    mean: float
    shape: CategoricalDist | QuantileBatch

    def recompose(self):
        if isinstance(self.shape, CategoricalDist):
            return CategoricalDist(self.shape.atoms + self.mean, self.shape.probs)
        return QuantileBatch(self.shape.levels, self.shape.values + self.mean)


def quantile_fn(dist):
    """Return a vectorized levels -> values callable for any representation."""
    if callable(dist) and not hasattr(dist, "quantile"):
        return dist
    return dist.quantile


def midpoint_levels(n: int) -> np.ndarray:
    """Midpoint quantile grid (i - 0.5)/n, an unbiased integration rule."""
    if n < 1:
        raise ValueError("grid size must be >= 1")
    return (np.arange(n) + 0.5) / n


# ---------------------------------------------------------------------------
# scalar operations
# ---------------------------------------------------------------------------

def quantile_eval(dist, level: float) -> float:
    """Evaluate one quantile of any supported representation."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"quantile level {level} outside [0, 1]")
    return float(quantile_fn(dist)(np.asarray([level]))[0])


def expectation(dist) -> float:
    """Mean of a distribution (grid/sample mean for quantile batches)."""
    if isinstance(dist, NormalSpec):
        return float(dist.mean)
    return dist.mean()


def wasserstein(a, b, p: float = 1.0, grid_size: int = 10_000) -> float:
    """p-Wasserstein distance via the quantile-difference integral.

    Approximated on the midpoint level grid: both quantile functions are
    evaluated at (i - 0.5)/grid_size and the |difference|^p average is taken.
    """
    if p < 1.0:
        raise ValueError("wasserstein: order p must be >= 1")
    levels = midpoint_levels(grid_size)
    qa = quantile_fn(a)(levels)
    qb = quantile_fn(b)(levels)
    return float(np.mean(np.abs(qa - qb) ** p) ** (1.0 / p))


def quantile_mixture(curves, weights, levels):
    """Evaluate sum_k beta_k * F_k^{-1}(level) at shared levels.

    Non-negative weights keep the result non-decreasing in the level, i.e. a
    valid quantile function (the comonotonic sum of the components).
    """
    weights = np.asarray(weights, dtype=np.float64)
    if len(curves) != weights.size:
        raise ValueError("quantile mixture: one weight per curve required")
    if np.any(weights < 0):
        raise ValueError("quantile mixture: weights must be non-negative")
    levels = np.atleast_1d(np.asarray(levels, dtype=np.float64))
    out = np.zeros_like(levels)
    for curve, beta in zip(curves, weights):
        out += beta * quantile_fn(curve)(levels)
    return out


# ---------------------------------------------------------------------------
# categorical projection and convolution
# ---------------------------------------------------------------------------

def _check_uniform_support(support: np.ndarray) -> float:
    support = np.asarray(support, dtype=np.float64)
    if support.size < 2:
        raise ValueError("projection: support needs at least two atoms")
    steps = np.diff(support)
    dz = float(steps[0])
    if dz <= 0 or np.any(np.abs(steps - dz) > 1e-9 * max(1.0, abs(dz))):
        raise ValueError("projection: target support must be uniformly spaced")
    return dz


def projection_weights(source_atoms, support, shift: float = 0.0):
    """Weight matrix W (and dW/dshift) of the neighbor-splitting projection.

    Each (possibly shifted) source atom is clipped to the support range and
    its mass split linearly between the two neighboring support atoms:
    projected[i] = sum_j W[i, j] * source_probs[j].
    """
    support = np.asarray(support, dtype=np.float64)
    dz = _check_uniform_support(support)
    lo, hi = support[0], support[-1]
    src = np.asarray(source_atoms, dtype=np.float64) + shift
    clipped = np.clip(src, lo, hi)
    dist = clipped[None, :] - support[:, None]
    w = np.clip(1.0 - np.abs(dist) / dz, 0.0, 1.0)
    inside = (src > lo) & (src < hi)
    dw = np.where(
        (np.abs(dist) < dz) & inside[None, :],
        -np.sign(dist) / dz,
        0.0,
    )
    return w, dw


def project_categorical(source_atoms, source_probs, support) -> CategoricalDist:
    """Project an arbitrary finite-support PMF onto a uniform support."""
    source_probs = np.asarray(source_probs, dtype=np.float64)
    w, _ = projection_weights(source_atoms, support)
    return CategoricalDist(np.asarray(support, dtype=np.float64), w @ source_probs)


def convolve_pmf(a: CategoricalDist, b: CategoricalDist) -> CategoricalDist:
    """Exact distribution of the independent sum: pairwise atom sums.

    Atoms closer than a merge tolerance are combined to keep floating-point
    near-duplicates from blowing up the support.
    """
    sums = (a.atoms[:, None] + b.atoms[None, :]).reshape(-1)
    masses = (a.probs[:, None] * b.probs[None, :]).reshape(-1)
    order = np.argsort(sums, kind="stable")
    sums, masses = sums[order], masses[order]
    atoms: list[float] = []
    probs: list[float] = []
    for s, m in zip(sums, masses):
        if atoms and abs(s - atoms[-1]) <= ATOM_MERGE_TOL * max(1.0, abs(s)):
            probs[-1] += m
        else:
            atoms.append(float(s))
            probs.append(float(m))
    return CategoricalDist(np.asarray(atoms), np.asarray(probs))


def _extended_support(support: np.ndarray) -> np.ndarray:
    """Support of the sum of two PMFs living on the same uniform grid."""
    dz = _check_uniform_support(support)
    n = support.size
    return 2.0 * support[0] + dz * np.arange(2 * n - 1)


def conv_coefficients(pa: np.ndarray, pb: np.ndarray, use_fft: bool) -> np.ndarray:
    """Convolution of two prob vectors on a shared grid (index domain)."""
    if use_fft:
        size = pa.size + pb.size - 1
        out = np.fft.irfft(np.fft.rfft(pa, size) * np.fft.rfft(pb, size), size)
        return np.clip(out, 0.0, None)
    return np.convolve(pa, pb)


def convolve_many_projected(dists, use_fft: bool = False) -> CategoricalDist:
    """Fold K same-support PMFs with a projection back after each convolution.

    The direct path pairs each step's exact convolution with the neighbor
    projection; the FFT path computes the convolution coefficients in the
    frequency domain. Both return a PMF on the shared input support.
    """
    dists = list(dists)
    if not dists:
        raise ValueError("convolution fold: need at least one distribution")
    support = dists[0].atoms
    _check_uniform_support(support)
    for d in dists[1:]:
        if d.atoms.shape != support.shape or np.any(np.abs(d.atoms - support) > 1e-9):
            raise ValueError("convolution fold: all supports must match")
    if len(dists) == 1:
        return dists[0]

    ext = _extended_support(support)
    acc = dists[0]
    for d in dists[1:]:
        if use_fft:
            coeffs = conv_coefficients(acc.probs, d.probs, use_fft=True)
            total = coeffs.sum()
            if total > 0:
                coeffs = coeffs / total
            acc = project_categorical(ext, coeffs, support)
        else:
            exact = convolve_pmf(acc, d)
            acc = project_categorical(exact.atoms, exact.probs, support)
    return acc


def mean_shape_decompose(dist) -> MeanShape:
    """Split a distribution into its mean and a zero-mean shape part."""
    mu = expectation(dist)
    if isinstance(dist, CategoricalDist):
        shape = CategoricalDist(dist.atoms - mu, dist.probs)
    elif isinstance(dist, QuantileBatch):
        shape = QuantileBatch(dist.levels, dist.values - mu)
    else:
        raise TypeError(f"cannot decompose {type(dist).__name__}")
    return MeanShape(mean=mu, shape=shape)


# ---------------------------------------------------------------------------
# normal inverse CDF (ground truth for the matrix-game payoffs)
# ---------------------------------------------------------------------------

# Acklam's rational approximation of the standard normal inverse CDF,
# |error| < 1.15e-9 over (0, 1); one Newton step pushes it near machine eps.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)

_P_LOW = 0.02425


def _std_normal_quantile(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        raise ValueError("standard normal quantile requires 0 < p < 1")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        z = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        z = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        z = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # one Newton refinement on the CDF
    cdf = 0.5 * math.erfc(-z / math.sqrt(2.0))
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        z -= (cdf - p) / pdf
    return z


_std_normal_quantile_vec = np.vectorize(_std_normal_quantile, otypes=[np.float64])


def normal_quantile(spec: NormalSpec, levels):
    """Quantiles of N(mean, std^2); std = 0 returns the mean at any level."""
    if np.isscalar(levels):
        level = float(levels)
        if not 0.0 <= level <= 1.0:
            raise ValueError("quantile level outside [0, 1]")
        if spec.std == 0.0:
            return float(spec.mean)
        if level in (0.0, 1.0):
            raise ValueError("normal quantile diverges at levels 0 and 1")
        return spec.mean + spec.std * _std_normal_quantile(level)
    levels = np.asarray(levels, dtype=np.float64)
    if np.any((levels < 0) | (levels > 1)):
        raise ValueError("quantile level outside [0, 1]")
    if spec.std == 0.0:
        return np.full(levels.shape, float(spec.mean))
    if np.any((levels == 0) | (levels == 1)):
        raise ValueError("normal quantile diverges at levels 0 and 1")
    return spec.mean + spec.std * _std_normal_quantile_vec(levels)
