"""Evaluation against analytic ground truth and plot-ready exports.

Three metrics: mean absolute joint-value error across all joint actions,
mean 1-Wasserstein distance between modeled and true return distributions,
and the expected return of the greedy decentralized policy. Expected-only
methods are scored with their joint value treated as a point mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .distributions import CategoricalDist, midpoint_levels, normal_quantile
from .envs import GroundTruth, MatrixGameSpec
from .training import FactorizedModel

EVAL_GRID = 10_000


@dataclass
class MetricsReport:
    method: str
    qdist: float
    wdist: float
    wdist_optimal: float
    ret: float
    greedy_action: list[str]
    digm: bool
    detail: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "qdist": self.qdist,
            "wdist": self.wdist,
            "wdist_optimal_action": self.wdist_optimal,
            "return": self.ret,
            "greedy_action": self.greedy_action,
            "digm": self.digm,
            "detail": self.detail,
        }

    @staticmethod
    def csv_header() -> str:
        return "method,qdist,wdist,wdist_optimal,return,digm"

    def to_csv_row(self) -> str:
        return (f"{self.method},{self.qdist!r},{self.wdist!r},"
                f"{self.wdist_optimal!r},{self.ret!r},{int(self.digm)}")


def _joint_curves(model: FactorizedModel, levels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Model joint quantile curves [n_joint, grid] and joint means [n_joint]."""
    if model.kind == "expected":
        psi = model.joint_tables()["psi"].value
        return np.repeat(psi[:, None], levels.size, axis=1), psi
    if model.kind == "iqn":
        z = model.joint_tables(levels)["z_joint"].value
        return z, z.mean(axis=1)
    probs = model.joint_tables()["p_joint"].value
    support = model.head.support
    curves = np.stack(
        [CategoricalDist(support, row).quantile(levels) for row in probs], axis=0
    )
    return curves, probs @ support


def _agent_curves(model: FactorizedModel, levels: np.ndarray) -> list[np.ndarray]:
    """Per-agent quantile curves [n_actions, grid], one entry per agent."""
    if model.kind == "expected":
        tables = model.utility_tables()
        return [np.repeat(q.value[:, None], levels.size, axis=1)
                for q in tables["q_list"]]
    if model.kind == "iqn":
        tables = model.utility_tables(levels)
        return [z.value for z in tables["z_list"]]
    tables = model.utility_tables()
    support = model.head.support
    out = []
    for p in tables["p_list"]:
        out.append(np.stack(
            [CategoricalDist(support, row).quantile(levels) for row in p.value], axis=0
        ))
    return out


@lru_cache(maxsize=8)
def _truth_curves_cached(params: tuple, grid_size: int) -> np.ndarray:
    levels = midpoint_levels(grid_size)
    from .distributions import NormalSpec
    return np.stack(
        [normal_quantile(NormalSpec(m, s), levels) for m, s in params], axis=0
    )


def _truth_curves(truth: GroundTruth, levels: np.ndarray) -> np.ndarray:
    params = tuple((float(d.mean), float(d.std)) for d in truth.dists)
    return _truth_curves_cached(params, levels.size)


def metric_qdist(joint_q: np.ndarray, truth: GroundTruth) -> float:
    return float(np.mean(np.abs(joint_q - truth.means)))


def metric_wdist(joint_curves: np.ndarray, truth: GroundTruth,
                 levels: np.ndarray) -> tuple[float, float]:
    """(mean over all joint actions, value at the optimal action)."""
    gt = _truth_curves(truth, levels)
    per_action = np.mean(np.abs(joint_curves - gt), axis=1)
    return float(per_action.mean()), float(per_action[truth.optimal_index])


def metric_return(greedy_joint: tuple[int, ...], game: MatrixGameSpec,
                  truth: GroundTruth) -> float:
    return float(truth.means[game.joint_index(greedy_joint)])


def evaluate_model(model: FactorizedModel, truth: GroundTruth,
                   grid_size: int = EVAL_GRID, with_detail: bool = False) -> MetricsReport:
    game = model.game
    levels = midpoint_levels(grid_size)
    # open-interval grid: sigma=0 cells aside, the normal quantile is finite
    joint_curves, joint_q = _joint_curves(model, levels)
    qdist = metric_qdist(joint_q, truth)
    wdist, wdist_opt = metric_wdist(joint_curves, truth, levels)
    greedy = model.greedy_joint_action()
    ret = metric_return(greedy, game, truth)
    digm = model.digm_consistent()

    detail: list[dict] = []
    if with_detail:
        gt = _truth_curves(truth, levels)
        enum = game.joint_enumeration()
        for j, row in enumerate(enum):
            detail.append({
                "action": [game.action_names[k][a] for k, a in enumerate(row)],
                "true_mean": float(truth.means[j]),
                "true_std": float(truth.dists[j].std),
                "model_q": float(joint_q[j]),
                "abs_error": float(abs(joint_q[j] - truth.means[j])),
                "w1": float(np.mean(np.abs(joint_curves[j] - gt[j]))),
            })

    return MetricsReport(
        method=model.cfg.method,
        qdist=qdist,
        wdist=wdist,
        wdist_optimal=wdist_opt,
        ret=ret,
        greedy_action=[game.action_names[k][a] for k, a in enumerate(greedy)],
        digm=digm,
        detail=detail,
    )


def export_factorization(model: FactorizedModel, truth: GroundTruth,
                         joint_action, grid_size: int = 201) -> dict:
    """Plot-ready curves for one joint action: ground truth, joint, per-agent."""
    game = model.game
    joint_action = tuple(int(a) for a in joint_action)
    j = game.joint_index(joint_action)  # validates the action
    levels = midpoint_levels(grid_size)
    joint_curves, joint_q = _joint_curves(model, levels)
    agent_curves = _agent_curves(model, levels)
    return {
        "method": model.cfg.method,
        "joint_action": [game.action_names[k][a] for k, a in enumerate(joint_action)],
        "levels": levels.tolist(),
        "z_gt": normal_quantile(truth.dists[j], levels).tolist(),
        "z_jt": joint_curves[j].tolist(),
        "z_agents": [agent_curves[k][joint_action[k]].tolist()
                     for k in range(game.n_agents)],
        "q_jt": float(joint_q[j]),
        "true_mean": float(truth.means[j]),
        "true_std": float(truth.dists[j].std),
    }
