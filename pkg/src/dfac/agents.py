"""Per-agent utility networks with interchangeable output heads.

All agents share one set of parameters; the one-hot agent index inside the
observation is what differentiates them. Three head flavors:

- expected: plain action values,
- iqn: implicit quantile values via a cosine level embedding combined with
  the torso output by a Hadamard product,
- categorical: per-action softmax over a fixed uniform support.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, Affine, Parameter, Tensor
from .distributions import CategoricalDist, QuantileBatch, expectation


# Per-method network widths. Torso activations: ReLU after the first layer,
# linear second layer feeding the head.
ARCHITECTURES = {
    "vdn": {"head": "expected", "torso": (64, 512)},
    "qmix": {"head": "expected", "torso": (64, 512)},
    "qplex": {"head": "expected", "torso": (32,)},
    "ddn": {"head": "iqn", "torso": (64, 512), "cos_features": 64},
    "dmix": {"head": "iqn", "torso": (64, 512), "cos_features": 64},
    "dplex": {"head": "iqn", "torso": (64, 32), "cos_features": 256},
    "ddn-c51": {"head": "categorical", "torso": (64, 512)},
    "dmix-c51": {"head": "categorical", "torso": (64, 512)},
    "dplex-c51": {"head": "categorical", "torso": (64, 32)},
}


def _torso(rng, obs_dim: int, widths, name: str) -> MLP:
    sizes = [obs_dim, *widths]
    acts = ["relu"] + [None] * (len(widths) - 1)
    return MLP(rng, sizes, acts, name)


class ExpectedHead:
    """MLP producing one scalar utility per action."""

    kind = "expected"

    def __init__(self, rng, obs_dim: int, n_actions: int, torso_widths):
        self.n_actions = n_actions
        self.torso = _torso(rng, obs_dim, torso_widths, "agent.torso")
        self.out = Affine(rng, torso_widths[-1], n_actions, "agent.out")

    def action_values(self, obs: Tensor) -> Tensor:
        """[rows, obs_dim] -> [rows, n_actions]."""
        return self.out(self.torso(obs))

    def expectations(self, obs: Tensor, levels=None) -> Tensor:
        return self.action_values(obs)

    def parameters(self):
        return self.torso.parameters() + self.out.parameters()


class IQNHead:
    """Implicit quantile head: values F^{-1}(obs, action | level).

    A level is embedded by cos(pi * i * level) for i in [0, m) followed by an
    affine layer with ReLU; the embedding multiplies the torso output
    element-wise before the action layer.
    """

    kind = "iqn"

    def __init__(self, rng, obs_dim: int, n_actions: int, torso_widths,
                 cos_features: int = 64):
        self.n_actions = n_actions
        self.cos_features = cos_features
        self.embed_width = torso_widths[-1]
        self.torso = _torso(rng, obs_dim, torso_widths, "agent.torso")
        self.level_embed = Affine(rng, cos_features, self.embed_width, "agent.levels")
        self.out = Affine(rng, self.embed_width, n_actions, "agent.out")

    def cosine_features(self, levels) -> np.ndarray:
        levels = np.asarray(levels, dtype=np.float64)
        if np.any((levels < 0) | (levels > 1)):
            raise ValueError("quantile level outside [0, 1]")
        args = levels[:, None] * (np.pi * np.arange(self.cos_features))
        np.cos(args, out=args)
        return args

    def quantile_embedding(self, levels) -> Tensor:
        """[N] levels -> [N, embed_width]."""
        return ad.relu(self.level_embed(Tensor(self.cosine_features(levels))))

    def quantile_values(self, obs: Tensor, levels) -> Tensor:
        """[rows, obs_dim] x [N] -> [rows, n_actions, N]."""
        levels = np.atleast_1d(np.asarray(levels, dtype=np.float64))
        if levels.size == 0:
            raise ValueError("iqn forward: empty level list")
        rows = obs.shape[0]
        psi = ad.reshape(self.torso(obs), (rows, 1, self.embed_width))
        phi = ad.reshape(self.quantile_embedding(levels), (1, levels.size, self.embed_width))
        merged = ad.reshape(ad.mul(psi, phi), (rows * levels.size, self.embed_width))
        vals = ad.reshape(self.out(merged), (rows, levels.size, self.n_actions))
        return ad.transpose(vals, (0, 2, 1))

    def expectations(self, obs: Tensor, levels) -> Tensor:
        return ad.reduce_mean(self.quantile_values(obs, levels), axis=2)

    def parameters(self):
        return (self.torso.parameters() + self.level_embed.parameters()
                + self.out.parameters())


class CategoricalHead:
    """Per-action categorical PMF over a fixed uniform support.

    The output bias starts as a bell curve centered on the middle of the
    support so the initial PMFs are concentrated; near-uniform initial PMFs
    would put heavy mass at the support edges after the joint convolution and
    distort the joint mean through boundary clipping.
    """

    kind = "categorical"

    def __init__(self, rng, obs_dim: int, n_actions: int, torso_widths,
                 n_atoms: int = 51, v_min: float = -20.0, v_max: float = 20.0):
        self.n_actions = n_actions
        self.support = np.linspace(v_min, v_max, n_atoms)
        self.n_atoms = n_atoms
        self.torso = _torso(rng, obs_dim, torso_widths, "agent.torso")
        self.out = Affine(rng, torso_widths[-1], n_actions * n_atoms, "agent.out")
        prior = -np.square(self.support / 4.0)
        self.out.b.value[...] = np.tile(prior, n_actions)

    def probs(self, obs: Tensor) -> Tensor:
        """[rows, obs_dim] -> [rows, n_actions, n_atoms] softmax PMFs."""
        logits = self.out(self.torso(obs))
        shaped = ad.reshape(logits, (obs.shape[0], self.n_actions, self.n_atoms))
        return ad.softmax(shaped, axis=-1)

    def expectations(self, obs: Tensor, levels=None) -> Tensor:
        weighted = ad.mul(self.probs(obs), Tensor(self.support))
        return ad.reduce_sum(weighted, axis=2)

    def parameters(self):
        return self.torso.parameters() + self.out.parameters()


def build_head(method: str, rng, obs_dim: int, n_actions: int,
               n_atoms: int = 51, v_min: float = -20.0, v_max: float = 20.0):
    arch = ARCHITECTURES.get(method)
    if arch is None:
        raise ValueError(f"unknown method {method!r}")
    if arch["head"] == "expected":
        return ExpectedHead(rng, obs_dim, n_actions, arch["torso"])
    if arch["head"] == "iqn":
        return IQNHead(rng, obs_dim, n_actions, arch["torso"], arch["cos_features"])
    return CategoricalHead(rng, obs_dim, n_actions, arch["torso"],
                           n_atoms=n_atoms, v_min=v_min, v_max=v_max)


# ---------------------------------------------------------------------------
# convenience wrappers over single observations
# ---------------------------------------------------------------------------

def iqn_forward(head: IQNHead, observation, levels) -> list[QuantileBatch]:
    """Quantile batches for one observation, one batch per action."""
    obs = Tensor(np.asarray(observation, dtype=np.float64)[None, :])
    vals = head.quantile_values(obs, levels).value[0]
    levels = np.atleast_1d(np.asarray(levels, dtype=np.float64))
    return [QuantileBatch(levels.copy(), vals[a]) for a in range(head.n_actions)]


def c51_forward(head: CategoricalHead, observation) -> list[CategoricalDist]:
    """Categorical distributions for one observation, one per action."""
    obs = Tensor(np.asarray(observation, dtype=np.float64)[None, :])
    probs = head.probs(obs).value[0]
    return [CategoricalDist(head.support, probs[a]) for a in range(head.n_actions)]


def head_expectation(output) -> float:
    """Expected value of a single-action head output of any flavor."""
    if isinstance(output, (int, float, np.floating)):
        return float(output)
    return expectation(output)


def greedy_action(q_values) -> int:
    """Index of the maximum entry; ties go to the lowest index."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.size == 0:
        raise ValueError("greedy action: empty value list")
    if not np.all(np.isfinite(q)):
        raise ValueError("greedy action: non-finite utility value")
    return int(np.argmax(q))


def checkpoint_parameters(params: list[Parameter]) -> dict:
    return {
        p.name: {"shape": list(p.value.shape), "values": p.value.reshape(-1).tolist()}
        for p in params
    }


def restore_parameters(params: list[Parameter], blob: dict) -> None:
    for p in params:
        if p.name not in blob:
            raise ValueError(f"checkpoint missing parameter {p.name!r}")
        entry = blob[p.name]
        if list(p.value.shape) != list(entry["shape"]):
            raise ValueError(
                f"checkpoint shape mismatch for {p.name!r}: "
                f"expected {list(p.value.shape)}, found {entry['shape']}"
            )
        p.value[...] = np.asarray(entry["values"], dtype=np.float64).reshape(p.value.shape)
    extra = set(blob) - {p.name for p in params}
    if extra:
        raise ValueError(f"checkpoint has unknown parameters {sorted(extra)[:3]}")
