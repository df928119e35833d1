"""Self-verification suite: independent oracles for the core numerics.

Each check returns (name, passed, detail). The CLI `verify` command runs all
of them and reports machine-readable results; the test suite reuses the same
functions.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import envs
from .autodiff import Tensor, gradient_check
from .distributions import (
    CategoricalDist,
    QuantileBatch,
    convolve_many_projected,
    convolve_pmf,
    midpoint_levels,
    project_categorical,
    quantile_mixture,
)
from .mixers import check_digm, dfac_mix, shape_sum
from .seeding import stream
from .training import FactorizedModel, build_loss, default_config, quantile_huber_loss


def _result(name, passed, detail=""):
    return {"name": name, "passed": bool(passed), "detail": detail}


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------

def check_gradient_oracle(n_probes: int = 100, seed: int = 0):
    """Finite-difference probes across every head and mixer family."""
    rng = stream(seed, "verify-grad")
    game = envs.benchmark_spec()
    methods = ["vdn", "qmix", "qplex", "ddn", "dmix", "dplex",
               "ddn-c51", "dmix-c51", "dplex-c51"]
    per_method = max(1, n_probes // len(methods))
    worst = (0.0, "")
    total = 0
    try:
        for method in methods:
            cfg = default_config(method, seed=seed, n_quantiles=8,
                                 n_target_quantiles=8, n_eval_quantiles=8)
            model = FactorizedModel(cfg, game, stream(seed, "verify-grad", method))
            batch = {
                "actions": np.asarray(
                    [[int(rng.integers(c)) for c in game.n_actions] for _ in range(6)]
                ),
                "rewards": rng.normal(0.0, 5.0, size=6),
                "dones": np.ones(6, dtype=bool),
            }
            frozen_levels = rng.random(cfg.n_quantiles)

            class _FixedRng:
                def random(self, n=None):
                    return frozen_levels if n else frozen_levels

            loss_fn = lambda: build_loss(cfg, model, model, batch, _FixedRng(),
                                         detach=False)  # noqa: E731
            err, where = gradient_check(loss_fn, model.parameters(), rng,
                                        n_probes=per_method)
            total += per_method
            if err > worst[0]:
                worst = (err, f"{method}:{where}")
    except AssertionError as exc:
        return _result("gradient-oracle", False, str(exc))
    return _result("gradient-oracle", True,
                   f"{total} probes, worst relative error {worst[0]:.2e} at {worst[1]}")


def check_fft_convolution(n_cases: int = 100, seed: int = 0):
    """FFT and direct convolution folds must agree atom-by-atom."""
    rng = stream(seed, "verify-fft")
    worst = 0.0
    for _ in range(n_cases):
        n = int(rng.integers(3, 513))
        k = int(rng.integers(2, 9))
        support = np.linspace(-10, 10, n)
        dists = []
        for _ in range(k):
            p = rng.random(n) + 1e-3
            dists.append(CategoricalDist(support, p / p.sum()))
        direct = convolve_many_projected(dists, use_fft=False)
        fast = convolve_many_projected(dists, use_fft=True)
        worst = max(worst, float(np.max(np.abs(direct.probs - fast.probs))))
        if worst > 1e-9:
            return _result("fft-convolution", False,
                           f"paths diverge by {worst:.3e} (n={n}, k={k})")
    return _result("fft-convolution", True,
                   f"{n_cases} random folds, max atom deviation {worst:.2e}")


def check_exact_convolution():
    """Fair-coin sum: {0:.5, 1:.5} * itself = {0:.25, 1:.5, 2:.25} exactly."""
    coin = CategoricalDist([0.0, 1.0], [0.5, 0.5])
    out = convolve_pmf(coin, coin)
    ok = (np.array_equal(out.atoms, [0.0, 1.0, 2.0])
          and np.array_equal(out.probs, [0.25, 0.5, 0.25]))
    return _result("exact-convolution", ok, f"atoms {out.atoms.tolist()}")


def check_projection_cases():
    """Hand cases of the neighbor-splitting projection."""
    support = np.arange(0.0, 21.0)
    cases = []
    on_atom = project_categorical([7.0], [1.0], support)
    cases.append(abs(on_atom.probs[7] - 1.0) <= 1e-12)
    halfway = project_categorical([2.5], [1.0], support)
    cases.append(abs(halfway.probs[2] - 0.5) <= 1e-12
                 and abs(halfway.probs[3] - 0.5) <= 1e-12)
    clipped = project_categorical([25.0], [1.0], support)
    cases.append(abs(clipped.probs[-1] - 1.0) <= 1e-12)
    return _result("projection-hand-cases", all(cases), f"{sum(cases)}/3 cases")


def check_nonlinear_mixer_counterexample():
    """An exp-transformed mixer flips the greedy action of a stochastic utility.

    Point mass at 2 vs a 50/50 mix of 0 and 3: expectations order as 2 > 1.5,
    but after exp() the order reverses (about 7.389 vs 10.543), so the
    monotonic transform alone cannot preserve the argmax.
    """
    best = CategoricalDist([2.0], [1.0])
    other = CategoricalDist([0.0, 3.0], [0.5, 0.5])
    exp_means = []
    for dist in (best, other):
        exp_means.append(float(np.exp(dist.atoms) @ dist.probs))
    ok = (abs(exp_means[0] - math.exp(2)) < 1e-9
          and abs(exp_means[1] - (0.5 + 0.5 * math.exp(3))) < 1e-9
          and abs(exp_means[0] - 7.389) < 1e-3
          and abs(exp_means[1] - 10.543) < 1e-3
          and not check_digm([[best.mean(), other.mean()]], exp_means))
    return _result("nonlinear-mixer-counterexample", ok,
                   f"E[exp Z] = {exp_means[0]:.6f} vs {exp_means[1]:.6f}")


def check_quantile_huber_cases():
    """Hand-evaluated pairwise losses for both Huber branches."""
    quad = quantile_huber_loss([0.0], [0.5], [1.0], kappa=1.0)
    lin = quantile_huber_loss([0.0], [0.5], [-2.0], kappa=1.0)
    zero = quantile_huber_loss([1.5, 1.5], [0.25, 0.75], [1.5, 1.5], kappa=1.0)
    ok = (abs(quad - 0.25) <= 1e-12 and abs(lin - 0.75) <= 1e-12 and zero == 0.0)
    return _result("quantile-huber-hand-cases", ok,
                   f"quadratic {quad:.6f}, linear {lin:.6f}, zero {zero:.6f}")


def check_shape_sum_zero_mean(n_cases: int = 1000, seed: int = 0):
    rng = stream(seed, "verify-shape")
    worst = 0.0
    for _ in range(n_cases):
        n_curves = int(rng.integers(1, 5))
        n_levels = int(rng.integers(2, 33))
        levels = np.sort(rng.random(n_levels))
        batches = [QuantileBatch(levels, rng.normal(0, 5, n_levels))
                   for _ in range(n_curves)]
        means = [b.mean() for b in batches]
        out = shape_sum(batches, means)
        worst = max(worst, abs(out.values.sum()))
    ok = worst <= 1e-9
    return _result("shape-sum-zero-mean", ok, f"worst |sum of values| {worst:.2e}")


def check_additive_joint_identity(seed: int = 0):
    """Additive mean part + additive shape part equals the unit quantile mixture."""
    rng = stream(seed, "verify-ddn")
    game = envs.benchmark_spec()
    cfg = default_config("ddn", seed=seed, n_quantiles=16)
    model = FactorizedModel(cfg, game, rng)
    levels = midpoint_levels(16)
    tables = model.joint_tables(levels)
    z_joint = tables["z_joint"].value
    z_list = [z.value for z in tables["z_list"]]
    enum = game.joint_enumeration()
    worst = 0.0
    for j, row in enumerate(enum):
        curves = [QuantileBatch(levels, z_list[k][a]) for k, a in enumerate(row)]
        mixture = quantile_mixture(curves, np.ones(len(curves)), levels)
        worst = max(worst, float(np.max(np.abs(z_joint[j] - mixture))))
    ok = worst <= 1e-12
    return _result("additive-joint-identity", ok, f"max pointwise gap {worst:.2e}")


def check_digm_fresh_models(seed: int = 0):
    """Freshly initialized models of all nine methods must pass the audit."""
    game = envs.benchmark_spec()
    failures = []
    for method in ("vdn", "qmix", "qplex", "ddn", "dmix", "dplex",
                   "ddn-c51", "dmix-c51", "dplex-c51"):
        cfg = default_config(method, seed=seed, n_quantiles=16,
                            n_target_quantiles=16, n_eval_quantiles=16)
        model = FactorizedModel(cfg, game, stream(seed, "verify-digm", method))
        if not model.digm_consistent():
            failures.append(method)
    return _result("digm-fresh-models", not failures,
                   f"failures: {failures}" if failures else "all nine methods consistent")


def check_dfac_mix_mean(seed: int = 0):
    rng = stream(seed, "verify-mix")
    worst = 0.0
    for _ in range(200):
        levels = np.sort(rng.random(int(rng.integers(2, 17))))
        values = rng.normal(0, 3, levels.size)
        phi = QuantileBatch(levels, values - values.mean())
        psi = float(rng.normal(0, 10))
        out = dfac_mix(psi, phi)
        worst = max(worst, abs(out.mean() - psi))
    ok = worst <= 1e-12
    return _result("mean-shape-recomposition", ok, f"worst mean gap {worst:.2e}")


def run_all(fast: bool = False) -> list[dict]:
    grad_probes = 30 if fast else 100
    fft_cases = 25 if fast else 100
    checks = [
        check_exact_convolution(),
        check_projection_cases(),
        check_nonlinear_mixer_counterexample(),
        check_quantile_huber_cases(),
        check_shape_sum_zero_mean(200 if fast else 1000),
        check_dfac_mix_mean(),
        check_additive_joint_identity(),
        check_digm_fresh_models(),
        check_fft_convolution(fft_cases),
        check_gradient_oracle(grad_probes),
    ]
    return checks
