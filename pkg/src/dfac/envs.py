"""Cooperative one-step matrix games with normally distributed team rewards.

A game is a payoff table mapping each joint action to N(mean, std^2). The
bundled `table1.json` is the two-agent, three-action benchmark game. Analytic
ground truth (per-joint-action mean and return distribution) comes straight
from the table.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .distributions import NormalSpec, normal_quantile


@dataclass
class Transition:
    observations: list[np.ndarray]
    actions: tuple[int, ...]
    reward: float
    done: bool


@dataclass
class GroundTruth:
    means: np.ndarray          # per joint action, row-major enumeration
    dists: list[NormalSpec]
    optimal_index: int
    optimal_action: tuple[int, ...]
    optimal_return: float


@dataclass
class MatrixGameSpec:
    action_names: list[list[str]]          # per agent
    payoff: dict[tuple[int, ...], NormalSpec]
    discount: float = 0.99
    name: str = "matrix-game"
    _enum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.action_names or any(len(a) == 0 for a in self.action_names):
            raise ValueError("game: every agent needs at least one action")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("game: discount must lie in [0, 1)")
        counts = self.n_actions
        expected = list(itertools.product(*[range(c) for c in counts]))
        missing = [a for a in expected if a not in self.payoff]
        if missing:
            raise ValueError(f"game: payoff missing for joint action {missing[0]}")
        extra = [a for a in self.payoff if a not in set(expected)]
        if extra:
            raise ValueError(f"game: payoff entry for unknown joint action {extra[0]}")
        self._enum = np.asarray(expected, dtype=np.intp)

    @property
    def n_agents(self) -> int:
        return len(self.action_names)

    @property
    def n_actions(self) -> list[int]:
        return [len(a) for a in self.action_names]

    @property
    def obs_dim(self) -> int:
        # constant state feature plus the one-hot agent index
        return 1 + self.n_agents

    def joint_enumeration(self) -> np.ndarray:
        """All joint actions in row-major order, shape [n_joint, K]."""
        return self._enum

    def joint_index(self, actions) -> int:
        counts = self.n_actions
        idx = 0
        for a, c in zip(actions, counts):
            if not 0 <= a < c:
                raise ValueError(f"action {a} out of range for {c}-action agent")
            idx = idx * c + a
        return idx

    def joint_index_array(self, actions: np.ndarray) -> np.ndarray:
        """Row-major joint indices for a [batch, K] action array."""
        counts = self.n_actions
        strides = np.ones(len(counts), dtype=np.intp)
        for k in range(len(counts) - 2, -1, -1):
            strides[k] = strides[k + 1] * counts[k + 1]
        return np.asarray(actions, dtype=np.intp) @ strides

    def joint_name(self, actions) -> str:
        return ",".join(self.action_names[k][a] for k, a in enumerate(actions))

    def action_indices(self, names) -> tuple[int, ...]:
        out = []
        for k, name in enumerate(names):
            if name not in self.action_names[k]:
                raise ValueError(f"unknown action {name!r} for agent {k + 1}")
            out.append(self.action_names[k].index(name))
        return tuple(out)


def reset(spec: MatrixGameSpec) -> list[np.ndarray]:
    """Per-agent observations: [1] (constant state) ++ one-hot agent index."""
    obs = []
    for k in range(spec.n_agents):
        row = np.zeros(spec.obs_dim)
        row[0] = 1.0
        row[1 + k] = 1.0
        obs.append(row)
    return obs


def observation_matrix(spec: MatrixGameSpec) -> np.ndarray:
    return np.stack(reset(spec), axis=0)


def _open_unit_uniform(rng: np.random.Generator) -> float:
    # uniform on the open interval (0, 1); endpoint draws would blow up the
    # inverse-CDF sampler
    return float(rng.integers(1, 2**53)) / float(2**53)


def step(spec: MatrixGameSpec, joint_action, rng: np.random.Generator) -> Transition:
    """Play one (terminal) step; reward drawn via the inverse-CDF sampler."""
    joint_action = tuple(int(a) for a in joint_action)
    if len(joint_action) != spec.n_agents:
        raise ValueError("joint action has wrong number of agents")
    spec.joint_index(joint_action)  # range check
    payoff = spec.payoff[joint_action]
    reward = float(normal_quantile(payoff, _open_unit_uniform(rng)))
    return Transition(
        observations=reset(spec),
        actions=joint_action,
        reward=reward,
        done=True,
    )


def ground_truth(spec: MatrixGameSpec) -> GroundTruth:
    enum = spec.joint_enumeration()
    dists = [spec.payoff[tuple(row)] for row in enum]
    means = np.asarray([d.mean for d in dists])
    best = int(np.argmax(means))  # first maximum = lowest lexicographic
    return GroundTruth(
        means=means,
        dists=dists,
        optimal_index=best,
        optimal_action=tuple(int(a) for a in enum[best]),
        optimal_return=float(means[best]),
    )


def parse_spec(data: dict, origin: str = "<memory>") -> MatrixGameSpec:
    allowed = {"agents", "actions", "payoff", "discount", "name"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"{origin}: unknown keys {sorted(unknown)}")
    try:
        n_agents = int(data["agents"])
        actions = [list(map(str, a)) for a in data["actions"]]
        entries = list(data["payoff"])
    except KeyError as exc:
        raise ValueError(f"{origin}: missing required key {exc}") from exc
    if len(actions) != n_agents:
        raise ValueError(f"{origin}: expected {n_agents} action lists, got {len(actions)}")
    if not entries:
        raise ValueError(f"{origin}: payoff table is empty")

    payoff: dict[tuple[int, ...], NormalSpec] = {}
    for i, entry in enumerate(entries):
        where = f"{origin}: payoff[{i}]"
        if set(entry) != {"action", "mean", "std"}:
            raise ValueError(f"{where}: expected keys action/mean/std")
        names = entry["action"]
        if len(names) != n_agents:
            raise ValueError(f"{where}: joint action needs {n_agents} entries")
        idx = []
        for k, name in enumerate(names):
            if name not in actions[k]:
                raise ValueError(f"{where}: unknown action {name!r} for agent {k + 1}")
            idx.append(actions[k].index(name))
        std = float(entry["std"])
        if std < 0:
            raise ValueError(f"{where}: std must be >= 0, got {std}")
        key = tuple(idx)
        if key in payoff:
            raise ValueError(f"{where}: duplicate joint action {names}")
        payoff[key] = NormalSpec(mean=float(entry["mean"]), std=std)

    return MatrixGameSpec(
        action_names=actions,
        payoff=payoff,
        discount=float(data.get("discount", 0.99)),
        name=str(data.get("name", "matrix-game")),
    )


def spec_to_dict(spec: MatrixGameSpec) -> dict:
    entries = []
    for row in spec.joint_enumeration():
        key = tuple(int(a) for a in row)
        payoff = spec.payoff[key]
        entries.append({
            "action": [spec.action_names[k][a] for k, a in enumerate(key)],
            "mean": payoff.mean,
            "std": payoff.std,
        })
    return {
        "name": spec.name,
        "agents": spec.n_agents,
        "actions": [list(a) for a in spec.action_names],
        "discount": spec.discount,
        "payoff": entries,
    }


def load_spec(path) -> MatrixGameSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    return parse_spec(data, origin=str(path))


def benchmark_spec() -> MatrixGameSpec:
    """The bundled two-agent stochastic game (shipped as table1.json)."""
    text = resources.files("dfac").joinpath("data/table1.json").read_text("utf-8")
    return parse_spec(json.loads(text), origin="table1.json")
