"""Centralized training loop for the matrix game.

Episode collection with independent epsilon-greedy agents, an episode ring
buffer with uniform transition sampling, periodic hard target-network copies,
and the three loss families: squared TD error, pairwise quantile-Huber
regression, and categorical KL against the projected Bellman target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import envs
from .agents import build_head, greedy_action
from .autodiff import Tensor
from .mixers import build_mixer, categorical_joint_op, check_digm, quantile_joint_op
from .seeding import stream

METHODS = ("vdn", "qmix", "qplex", "ddn", "dmix", "dplex",
           "ddn-c51", "dmix-c51", "dplex-c51")

HEAD_KIND = {
    "vdn": "expected", "qmix": "expected", "qplex": "expected",
    "ddn": "iqn", "dmix": "iqn", "dplex": "iqn",
    "ddn-c51": "categorical", "dmix-c51": "categorical", "dplex-c51": "categorical",
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    method: str
    seed: int = 0
    episodes: int = 20_000
    learning_rate: float = 1e-4
    batch_size: int = 512
    buffer_episodes: int = 2_000
    target_update: int = 100
    epsilon: float = 1.0
    gamma: float = 0.99
    n_quantiles: int = 32          # N: live-network level samples
    n_target_quantiles: int = 32   # N': target-network level samples
    n_eval_quantiles: int = 32     # N^: deterministic midpoint grid for greedy
    kappa: float = 1.0
    c51_atoms: int = 51
    v_min: float = -20.0
    v_max: float = 20.0
    eval_interval: int = 200

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        for name in ("episodes", "batch_size", "buffer_episodes", "target_update",
                     "n_quantiles", "n_target_quantiles", "n_eval_quantiles",
                     "c51_atoms", "eval_interval"):
            if getattr(self, name) < (0 if name == "episodes" else 1):
                raise ValueError(f"{name} must be positive")
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be below v_max")


def default_config(method: str, seed: int = 0, **overrides) -> TrainConfig:
    """Per-method tuned hyperparameters for the benchmark game."""
    cfg = TrainConfig(method=method, seed=seed)
    if method in ("qplex", "dplex", "dplex-c51"):
        cfg = replace(cfg, batch_size=2048)
    if method in ("qplex", "dplex-c51"):
        cfg = replace(cfg, learning_rate=1e-3)
    if method == "dplex":
        cfg = replace(cfg, n_quantiles=512, n_target_quantiles=512,
                      n_eval_quantiles=512)
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """Ring buffer of complete episodes with uniform transition sampling."""

    def __init__(self, capacity_episodes: int, n_agents: int):
        if capacity_episodes < 1:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity_episodes
        self._episode_lengths: list[int] = []
        self._actions = np.zeros((0, n_agents), dtype=np.intp)
        self._rewards = np.zeros(0)
        self._dones = np.zeros(0, dtype=bool)
        self._start = 0  # first live transition

    def __len__(self) -> int:
        return self._rewards.size - self._start

    @property
    def n_episodes(self) -> int:
        return len(self._episode_lengths)

    def add_episode(self, episode: list[envs.Transition]) -> None:
        if not episode:
            raise ValueError("cannot store an empty episode")
        acts = np.asarray([t.actions for t in episode], dtype=np.intp)
        rews = np.asarray([t.reward for t in episode])
        dones = np.asarray([t.done for t in episode], dtype=bool)
        self._actions = np.concatenate([self._actions, acts], axis=0)
        self._rewards = np.concatenate([self._rewards, rews])
        self._dones = np.concatenate([self._dones, dones])
        self._episode_lengths.append(len(episode))
        while len(self._episode_lengths) > self.capacity:
            self._start += self._episode_lengths.pop(0)
        if self._start > self._rewards.size // 2:
            self._actions = self._actions[self._start:].copy()
            self._rewards = self._rewards[self._start:].copy()
            self._dones = self._dones[self._start:].copy()
            self._start = 0

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        n = len(self)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = self._start + rng.integers(0, n, size=batch_size)
        return {
            "actions": self._actions[idx],
            "rewards": self._rewards[idx],
            "dones": self._dones[idx],
        }


# ---------------------------------------------------------------------------
# model: shared-parameter agents plus a factorization mixer
# ---------------------------------------------------------------------------

class FactorizedModel:
    """One utility network (shared across agents) and one mixer."""

    def __init__(self, cfg: TrainConfig, game: envs.MatrixGameSpec,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.game = game
        self.kind = HEAD_KIND[cfg.method]
        self.obs = Tensor(envs.observation_matrix(game))
        self.enum = game.joint_enumeration()
        self.head = build_head(cfg.method, rng, game.obs_dim, max(game.n_actions),
                               n_atoms=cfg.c51_atoms, v_min=cfg.v_min, v_max=cfg.v_max)
        self.mixer = build_mixer(cfg.method, rng, [1.0], game.n_actions)

    def parameters(self):
        return self.head.parameters() + self.mixer.parameters()

    # -- per-agent tables ---------------------------------------------------

    def _agent_row(self, table: Tensor, agent: int) -> Tensor:
        row = ad.gather_rows(table, np.asarray([agent]))
        return ad.reshape(row, row.shape[1:])

    def utility_tables(self, levels=None) -> dict:
        """Per-agent utility tensors for the game's single state.

        Returns q_list (one [A_k] tensor per agent) always; adds z_list
        ([A_k, N] quantile values) for IQN heads and p_list ([A_k, n] PMFs)
        for categorical heads.
        """
        k = self.game.n_agents
        out: dict = {}
        if self.kind == "expected":
            table = self.head.action_values(self.obs)
            out["q_list"] = [
                ad.gather_rows(self._agent_row(table, i), np.arange(self.game.n_actions[i]))
                for i in range(k)
            ]
        elif self.kind == "iqn":
            if levels is None:
                raise ValueError("iqn tables need quantile levels")
            table = self.head.quantile_values(self.obs, levels)
            z_list = []
            for i in range(k):
                z = self._agent_row(table, i)
                z_list.append(ad.gather_rows(z, np.arange(self.game.n_actions[i])))
            out["z_list"] = z_list
            out["q_list"] = [ad.reduce_mean(z, axis=1) for z in z_list]
        else:
            table = self.head.probs(self.obs)
            p_list = []
            for i in range(k):
                p = self._agent_row(table, i)
                p_list.append(ad.gather_rows(p, np.arange(self.game.n_actions[i])))
            out["p_list"] = p_list
            support = Tensor(self.head.support)
            out["q_list"] = [ad.reduce_sum(ad.mul(p, support), axis=1) for p in p_list]
        return out

    def _slice_per_joint(self, per_agent: list[Tensor]) -> list[Tensor]:
        return [ad.gather_rows(t, self.enum[:, i]) for i, t in enumerate(per_agent)]

    def joint_tables(self, levels=None, use_fft: bool = False,
                     detach: bool = True) -> dict:
        """Joint mean table psi [n_joint] plus the joint distribution table."""
        tables = self.utility_tables(levels)
        psi = self.mixer.joint_expected(tables["q_list"], self.enum, detach=detach)
        out = {"psi": psi, **tables}
        if self.kind == "iqn":
            out["z_joint"] = quantile_joint_op(
                self._slice_per_joint(tables["z_list"]),
                self._slice_per_joint(tables["q_list"]),
                psi,
            )
        elif self.kind == "categorical":
            out["p_joint"] = categorical_joint_op(
                self._slice_per_joint(tables["p_list"]),
                self._slice_per_joint(tables["q_list"]),
                psi,
                self.head.support,
                use_fft=use_fft,
            )
        return out

    # -- evaluation-mode views (no gradients kept by callers) ----------------

    def eval_levels(self) -> np.ndarray:
        from .distributions import midpoint_levels
        return midpoint_levels(self.cfg.n_eval_quantiles)

    def agent_expectations(self, levels=None) -> list[np.ndarray]:
        """Per-agent expected utilities for greedy action selection."""
        if self.kind == "iqn" and levels is None:
            levels = self.eval_levels()
        tables = self.utility_tables(levels if self.kind == "iqn" else None)
        return [q.value.copy() for q in tables["q_list"]]

    def greedy_joint_action(self, levels=None) -> tuple[int, ...]:
        return tuple(greedy_action(q) for q in self.agent_expectations(levels))

    def digm_consistent(self, levels=None) -> bool:
        """Audit: joint-argmax of the mixed expectation vs per-agent argmaxes."""
        if self.kind == "iqn" and levels is None:
            levels = self.eval_levels()
        tables = self.joint_tables(levels if self.kind == "iqn" else None)
        if self.kind == "expected":
            joint_q = tables["psi"].value
        elif self.kind == "iqn":
            joint_q = tables["z_joint"].value.mean(axis=1)
        else:
            joint_q = tables["p_joint"].value @ self.head.support
        per_agent = [q.value for q in tables["q_list"]]
        return check_digm(per_agent, joint_q, self.game.n_actions)

    def copy_from(self, other: "FactorizedModel") -> None:
        for mine, theirs in zip(self.parameters(), other.parameters()):
            if mine.name != theirs.name or mine.value.shape != theirs.value.shape:
                raise ValueError("model structures differ; cannot copy parameters")
            mine.value[...] = theirs.value


def update_target(target: FactorizedModel, live: FactorizedModel) -> FactorizedModel:
    """Hard copy of all live parameters into the target snapshot."""
    target.copy_from(live)
    return target


# ---------------------------------------------------------------------------
# episode collection
# ---------------------------------------------------------------------------

def collect_episode(game: envs.MatrixGameSpec, model: FactorizedModel,
                    epsilon: float, env_rng: np.random.Generator,
                    explore_rng: np.random.Generator,
                    levels_rng: np.random.Generator | None = None) -> list:
    """One episode of independent epsilon-greedy action selection."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    coins = explore_rng.random(game.n_agents)
    randoms = [int(explore_rng.integers(0, c)) for c in game.n_actions]
    if epsilon >= 1.0:
        actions = tuple(randoms)
    else:
        levels = None
        if model.kind == "iqn":
            n = model.cfg.n_quantiles
            rng = levels_rng if levels_rng is not None else explore_rng
            levels = rng.random(n)
        expectations = model.agent_expectations(levels)
        actions = tuple(
            randoms[k] if coins[k] < epsilon else greedy_action(expectations[k])
            for k in range(game.n_agents)
        )
    return [envs.step(game, actions, env_rng)]


# ---------------------------------------------------------------------------
# TD targets and losses
# ---------------------------------------------------------------------------

def td_target_expected(rewards, dones, gamma: float, next_joint_q) -> np.ndarray:
    """y = r + gamma * Q_jt(s', u'*); terminal transitions use y = r."""
    rewards = np.asarray(rewards, dtype=np.float64)
    cont = 1.0 - np.asarray(dones, dtype=np.float64)
    return rewards + gamma * cont * np.asarray(next_joint_q, dtype=np.float64)


def td_target_quantile(rewards, dones, gamma: float, next_quantiles) -> np.ndarray:
    """Per-sample, per-level targets r + gamma * F^{-1}_target(s', u'* | w')."""
    rewards = np.asarray(rewards, dtype=np.float64)[:, None]
    cont = (1.0 - np.asarray(dones, dtype=np.float64))[:, None]
    nxt = np.asarray(next_quantiles, dtype=np.float64)
    if nxt.ndim == 1:
        nxt = np.broadcast_to(nxt, (rewards.shape[0], nxt.size))
    return rewards + gamma * cont * nxt


def td_target_c51(rewards, dones, gamma: float, next_probs, support) -> np.ndarray:
    """Projected categorical targets on the fixed support, one row per sample."""
    support = np.asarray(support, dtype=np.float64)
    dz = support[1] - support[0]
    rewards = np.asarray(rewards, dtype=np.float64)
    cont = 1.0 - np.asarray(dones, dtype=np.float64)
    batch = rewards.size

    if not np.any(cont):
        # all-terminal fast path: one Dirac at the reward per row
        pos = (np.clip(rewards, support[0], support[-1]) - support[0]) / dz
        lower = np.floor(pos).astype(np.intp)
        upper = np.minimum(lower + 1, support.size - 1)
        frac = pos - lower
        out = np.zeros((batch, support.size))
        rows = np.arange(batch)
        np.add.at(out, (rows, lower), 1.0 - frac)
        np.add.at(out, (rows, upper), frac)
        return out

    next_probs = np.asarray(next_probs, dtype=np.float64)
    if next_probs.ndim == 1:
        next_probs = np.broadcast_to(next_probs, (batch, support.size))
    # terminal rows collapse to a Dirac at the reward
    probs = np.where(cont[:, None] > 0, next_probs,
                     np.eye(1, support.size, 0)[0][None, :])
    atoms = rewards[:, None] + gamma * cont[:, None] * support[None, :]
    atoms = np.where(cont[:, None] > 0, atoms, rewards[:, None])

    clipped = np.clip(atoms, support[0], support[-1])
    pos = (clipped - support[0]) / dz
    lower = np.floor(pos).astype(np.intp)
    upper = np.minimum(lower + 1, support.size - 1)
    frac = pos - lower
    out = np.zeros((batch, support.size))
    rows = np.repeat(np.arange(batch), support.size).reshape(batch, support.size)
    np.add.at(out, (rows, lower), probs * (1.0 - frac))
    np.add.at(out, (rows, upper), probs * frac)
    return out


_SCRATCH: dict[tuple, np.ndarray] = {}


def _scratch(tag: str, shape, dtype=np.float64) -> np.ndarray:
    """Reusable work buffer; avoids large-page churn in the per-step loss."""
    key = (tag, shape, np.dtype(dtype).str)
    buf = _SCRATCH.get(key)
    if buf is None:
        buf = np.empty(shape, dtype=dtype)
        _SCRATCH[key] = buf
    return buf


def _quantile_huber_kernel(pred, levels, targets, kappa):
    """Pairwise quantile-Huber loss and its gradient w.r.t. the predictions.

    pred [..., N] at levels [N]; targets [..., N']; loss averages the
    (1/N') sum of pairwise terms over any leading batch dimensions.
    """
    pred = np.asarray(pred, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    shape = np.broadcast_shapes(
        targets[..., None, :].shape, pred[..., :, None].shape
    )
    delta = np.subtract(targets[..., None, :], pred[..., :, None],
                        out=_scratch("qh.delta", shape))
    hub = np.abs(delta, out=_scratch("qh.hub", shape))
    small = np.minimum(hub, kappa, out=_scratch("qh.small", shape))
    # Huber via c * (|d| - c/2) with c = min(|d|, kappa): both branches in one
    scaled = np.multiply(small, -0.5, out=_scratch("qh.tmp", shape))
    hub += scaled
    hub *= small
    neg = np.less(delta, 0.0, out=_scratch("qh.neg", shape, dtype=bool))
    weight = _scratch("qh.weight", shape)
    np.copyto(weight, np.broadcast_to(levels[:, None], shape))
    np.copyto(weight, np.broadcast_to((1.0 - levels)[:, None], shape), where=neg)
    n_target = targets.shape[-1]
    batch = max(pred.size // pred.shape[-1], 1)
    norm = 1.0 / (kappa * n_target * batch)
    loss = float(weight.reshape(-1) @ hub.reshape(-1) * norm)
    np.clip(delta, -kappa, kappa, out=delta)
    delta *= weight
    dpred = delta.sum(axis=-1)  # fresh array: it outlives the scratch buffers
    dpred *= -norm
    return loss, dpred


def quantile_huber_loss(pred, levels, targets, kappa: float = 1.0) -> float:
    """Quantile-Huber regression loss of predictions against target samples."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    pred = np.asarray(pred, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.float64)
    if pred.shape[-1] != levels.size:
        raise ValueError("one level per predicted value required")
    return _quantile_huber_kernel(pred, levels, targets, kappa)[0]


def quantile_huber_loss_op(pred: Tensor, levels, targets, kappa: float) -> Tensor:
    loss, dpred = _quantile_huber_kernel(pred.value, levels, targets, kappa)
    return Tensor(loss, (pred,), lambda g: (g * dpred,))


def _indexed_quantile_huber_numpy(table, idx, levels, targets, kappa):
    pred = np.take(table, idx, axis=0,
                   out=_scratch("qh.pred", (idx.size, table.shape[1])))
    loss, dpred = _quantile_huber_kernel(pred, levels, targets, kappa)
    onehot = np.zeros((idx.size, table.shape[0]))
    onehot[np.arange(idx.size), idx] = 1.0
    return loss, onehot.T @ dpred


try:  # single-pass twin of the numpy path; keeps the big per-sample
    # matrices out of memory entirely
    from numba import njit

    @njit(cache=True)
    def _indexed_quantile_huber_fused(table, idx, levels, targets, kappa):
        n_rows, n_levels = table.shape
        batch = idx.shape[0]
        n_targets = targets.shape[1]
        dtable = np.zeros((n_rows, n_levels))
        loss = 0.0
        for t in range(batch):
            row = idx[t]
            for i in range(n_levels):
                pred = table[row, i]
                level = levels[i]
                for j in range(n_targets):
                    d = targets[t, j] - pred
                    ad = abs(d)
                    c = min(ad, kappa)
                    w = (1.0 - level) if d < 0 else level
                    loss += w * c * (ad - 0.5 * c)
                    dtable[row, i] -= w * (d if ad <= kappa else
                                           (kappa if d > 0 else -kappa))
        norm = 1.0 / (kappa * n_targets * batch)
        return loss * norm, dtable * norm

    _HAVE_FUSED_KERNEL = True
except ImportError:  # pragma: no cover - numba is optional
    _HAVE_FUSED_KERNEL = False


def indexed_quantile_huber_op(table: Tensor, idx, levels, targets,
                              kappa: float) -> Tensor:
    """Quantile-Huber loss of table rows selected per sample.

    Equivalent to gather-then-loss but keeps the per-sample gradient matrix
    out of the graph: the backward pass reduces straight to the small table.
    """
    idx = np.asarray(idx, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    levels = np.asarray(levels, dtype=np.float64)
    if _HAVE_FUSED_KERNEL:
        loss, dtable = _indexed_quantile_huber_fused(
            table.value, idx, levels, targets, float(kappa))
    else:
        loss, dtable = _indexed_quantile_huber_numpy(
            table.value, idx, levels, targets, kappa)

    def back(g):
        return (g * dtable,)

    return Tensor(loss, (table,), back)


def kl_loss(target, predicted_probs, floor: float = 1e-12) -> float:
    """KL(target || predicted) for categoricals on a shared support."""
    from .distributions import CategoricalDist
    if isinstance(target, CategoricalDist):
        target_probs = target.probs
        if isinstance(predicted_probs, CategoricalDist):
            if not np.allclose(target.atoms, predicted_probs.atoms):
                raise ValueError("kl: supports differ")
            predicted_probs = predicted_probs.probs
        elif np.asarray(predicted_probs).shape != target.atoms.shape:
            raise ValueError("kl: support size mismatch")
    else:
        target_probs = np.asarray(target, dtype=np.float64)
    p = np.maximum(np.asarray(predicted_probs, dtype=np.float64), floor)
    t = np.asarray(target_probs, dtype=np.float64)
    terms = np.where(t > 0, t * (np.log(np.maximum(t, floor)) - np.log(p)), 0.0)
    return float(terms.sum())


def kl_loss_op(target_probs, probs: Tensor, floor: float = 1e-12) -> Tensor:
    """Batch-mean KL(target || probs); gradient only through `probs`.

    Projected targets carry at most two non-zero atoms per row, so the loss
    and gradient are computed on the sparse positions only.
    """
    t = np.asarray(target_probs, dtype=np.float64)
    batch = t.shape[0] if t.ndim > 1 else 1
    nz = np.nonzero(t)
    t_nz = t[nz]
    p_nz = np.maximum(probs.value[nz], floor)
    value = float((t_nz * (np.log(t_nz) - np.log(p_nz))).sum() / batch)
    grad = np.zeros_like(probs.value)
    grad[nz] = np.where(probs.value[nz] > floor, -t_nz / p_nz, 0.0) / batch
    return Tensor(value, (probs,), lambda g: (g * grad,))


# ---------------------------------------------------------------------------
# per-family loss construction
# ---------------------------------------------------------------------------

def _target_greedy_index(target: FactorizedModel, levels=None) -> int:
    """u'* via per-agent greedy on the target utilities (IGM-consistent)."""
    actions = target.greedy_joint_action(levels)
    return target.game.joint_index(actions)


def build_loss(cfg: TrainConfig, live: FactorizedModel, target: FactorizedModel,
               batch: dict, level_rng: np.random.Generator,
               detach: bool = True) -> Tensor:
    game = live.game
    joint_idx = game.joint_index_array(batch["actions"])
    rewards, dones = batch["rewards"], batch["dones"]
    all_terminal = bool(np.all(dones))

    if live.kind == "expected":
        tables = live.joint_tables(detach=detach)
        pred = ad.gather_rows(tables["psi"], joint_idx)
        if all_terminal:
            y = td_target_expected(rewards, dones, cfg.gamma, 0.0)
        else:
            tgt = target.joint_tables()
            next_q = tgt["psi"].value[_target_greedy_index(target)]
            y = td_target_expected(rewards, dones, cfg.gamma, next_q)
        diff = ad.sub(pred, Tensor(y))
        return ad.reduce_mean(ad.mul(diff, diff))

    if live.kind == "iqn":
        levels = level_rng.random(cfg.n_quantiles)
        tables = live.joint_tables(levels, detach=detach)
        if all_terminal:
            # terminal targets are level-independent; a single collapsed
            # target column leaves the pairwise loss unchanged
            targets = rewards[:, None]
        else:
            tlev = level_rng.random(cfg.n_target_quantiles)
            tgt = target.joint_tables(tlev)
            nxt = tgt["z_joint"].value[_target_greedy_index(target, tlev)]
            targets = td_target_quantile(rewards, dones, cfg.gamma, nxt)
        return indexed_quantile_huber_op(tables["z_joint"], joint_idx, levels,
                                         targets, cfg.kappa)

    # categorical
    tables = live.joint_tables(detach=detach)
    pred = ad.gather_rows(tables["p_joint"], joint_idx)
    if all_terminal:
        next_probs = np.zeros(cfg.c51_atoms)
    else:
        tgt = target.joint_tables()
        next_probs = tgt["p_joint"].value[_target_greedy_index(target)]
    target_probs = td_target_c51(rewards, dones, cfg.gamma, next_probs,
                                 live.head.support)
    return kl_loss_op(target_probs, pred)


# ---------------------------------------------------------------------------
# training driver
# ---------------------------------------------------------------------------

@dataclass
class LogRow:
    episode: int
    loss: float
    ret: float
    qdist: float
    wdist: float


@dataclass
class TrainingLog:
    rows: list[LogRow] = field(default_factory=list)
    digm_checks: list[bool] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["episode,loss,return,qdist,wdist"]
        for r in self.rows:
            lines.append(f"{r.episode},{r.loss!r},{r.ret!r},{r.qdist!r},{r.wdist!r}")
        return "\n".join(lines) + "\n"


def train(cfg: TrainConfig, game: envs.MatrixGameSpec,
          eval_callback=None) -> tuple[TrainingLog, FactorizedModel]:
    """Run the full loop; returns the log and the trained live model.

    `eval_callback(episode, model, metrics_row, digm_ok)` fires at every
    evaluation interval and once more after the final episode.
    """
    from .evaluation import evaluate_model

    init_rng = stream(cfg.seed, "init")
    env_rng = stream(cfg.seed, "env")
    explore_rng = stream(cfg.seed, "explore")
    sample_rng = stream(cfg.seed, "replay")
    level_rng = stream(cfg.seed, "levels")

    live = FactorizedModel(cfg, game, init_rng)
    target = FactorizedModel(cfg, game, stream(cfg.seed, "init"))
    update_target(target, live)
    optimizer = ad.Adam(live.parameters(), lr=cfg.learning_rate)
    buffer = ReplayBuffer(cfg.buffer_episodes, game.n_agents)
    truth = envs.ground_truth(game)
    log = TrainingLog()

    def record(episode: int, loss_value: float):
        report = evaluate_model(live, truth)
        digm_ok = live.digm_consistent()
        row = LogRow(episode=episode, loss=loss_value, ret=report.ret,
                     qdist=report.qdist, wdist=report.wdist)
        log.rows.append(row)
        log.digm_checks.append(digm_ok)
        if eval_callback is not None:
            eval_callback(episode, live, row, digm_ok)

    loss_value = float("nan")
    for episode in range(1, cfg.episodes + 1):
        buffer.add_episode(
            collect_episode(game, live, cfg.epsilon, env_rng, explore_rng, level_rng)
        )
        batch = buffer.sample(cfg.batch_size, sample_rng)
        loss = build_loss(cfg, live, target, batch, level_rng)
        loss_value = float(loss.value)
        if not np.isfinite(loss_value):
            raise FloatingPointError(f"training diverged at episode {episode}")
        ad.zero_grads(live.parameters())
        ad.backward(loss)
        optimizer.step()
        if episode % cfg.target_update == 0:
            update_target(target, live)
        if episode % cfg.eval_interval == 0:
            record(episode, loss_value)

    if cfg.episodes == 0 or cfg.episodes % cfg.eval_interval != 0:
        record(cfg.episodes, loss_value)
    return log, live
