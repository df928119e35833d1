"""Factorization functions and their distributional extensions.

Expected mixers: additive (VDN), monotonic (QMIX) and duplex dueling (QPLEX).
Each distributional variant keeps the expected mixer for the mean part and
adds a non-learnable zero-mean shape part: the sum of mean-centered agent
distributions, realized as a quantile mixture (IQN heads) or as a convolution
with neighbor projections (categorical heads).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Affine, Tensor
from .distributions import (
    CategoricalDist,
    QuantileBatch,
    conv_coefficients,
    convolve_pmf,
    expectation,
    project_categorical,
    projection_weights,
    _check_uniform_support,
    _extended_support,
)

LAMBDA_FLOOR = 1e-6


def joint_enumeration(action_counts) -> np.ndarray:
    """Row-major enumeration of joint actions, shape [n_joint, K]."""
    grids = np.meshgrid(*[np.arange(c) for c in action_counts], indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def joint_index(actions, action_counts) -> int:
    idx = 0
    for a, c in zip(actions, action_counts):
        idx = idx * c + a
    return idx


# ---------------------------------------------------------------------------
# expected factorization functions
# ---------------------------------------------------------------------------

class VdnMixer:
    """Additive factorization: the joint value is the sum of utilities."""

    kind = "vdn"

    def __init__(self, rng=None, state=None, action_counts=None):
        self.action_counts = list(action_counts or [])

    def joint_expected(self, q_list, enum, detach: bool = True) -> Tensor:
        total = None
        for k, q in enumerate(q_list):
            picked = ad.gather_rows(q, enum[:, k])
            total = picked if total is None else ad.add(total, picked)
        return total

    def parameters(self):
        return []


class QmixMixer:
    """State-conditioned monotonic mixing network.

    A hypernetwork maps the state to mixing weights; absolute values keep all
    effective weights non-negative, so the output never decreases in any
    utility. ELU on the hidden layer keeps gradients alive on the negative
    side while preserving monotonicity.
    """

    kind = "qmix"

    def __init__(self, rng, state, action_counts, hidden: int = 8):
        self.state = Tensor(np.asarray(state, dtype=np.float64)[None, :])
        self.action_counts = list(action_counts)
        self.hidden = hidden
        k = len(action_counts)
        s = self.state.shape[1]
        self.hyper_w1 = Affine(rng, s, k * hidden, "mixer.hyper_w1")
        self.hyper_b1 = Affine(rng, s, hidden, "mixer.hyper_b1")
        self.hyper_w2 = Affine(rng, s, hidden, "mixer.hyper_w2")
        self.hyper_b2 = Affine(rng, s, 1, "mixer.hyper_b2")

    def joint_expected(self, q_list, enum, detach: bool = True) -> Tensor:
        k = len(q_list)
        q_joint = ad.transpose(
            ad.stack_rows([ad.gather_rows(q, enum[:, i]) for i, q in enumerate(q_list)]),
            (1, 0),
        )
        w1 = ad.reshape(ad.absolute(self.hyper_w1(self.state)), (k, self.hidden))
        b1 = self.hyper_b1(self.state)
        w2 = ad.reshape(ad.absolute(self.hyper_w2(self.state)), (self.hidden, 1))
        b2 = self.hyper_b2(self.state)
        hidden = ad.elu(ad.add(ad.matmul(q_joint, w1), b1))
        out = ad.add(ad.matmul(hidden, w2), b2)
        return ad.reshape(out, (enum.shape[0],))

    def parameters(self):
        return (self.hyper_w1.parameters() + self.hyper_b1.parameters()
                + self.hyper_w2.parameters() + self.hyper_b2.parameters())


class _MonotonicScalar:
    """Monotonic scalar transform with hypernetwork weights, 16 hidden units."""

    def __init__(self, rng, state_dim: int, name: str, hidden: int = 16):
        self.hidden = hidden
        self.hyper_w1 = Affine(rng, state_dim, hidden, f"{name}.hyper_w1")
        self.hyper_b1 = Affine(rng, state_dim, hidden, f"{name}.hyper_b1")
        self.hyper_w2 = Affine(rng, state_dim, hidden, f"{name}.hyper_w2")
        self.hyper_b2 = Affine(rng, state_dim, 1, f"{name}.hyper_b2")

    def __call__(self, x: Tensor, state: Tensor) -> Tensor:
        """[rows, 1] -> [rows, 1], non-decreasing in the input."""
        w1 = ad.reshape(ad.absolute(self.hyper_w1(state)), (1, self.hidden))
        b1 = self.hyper_b1(state)
        w2 = ad.reshape(ad.absolute(self.hyper_w2(state)), (self.hidden, 1))
        b2 = self.hyper_b2(state)
        return ad.add(ad.matmul(ad.elu(ad.add(ad.matmul(x, w1), b1)), w2), b2)

    def parameters(self):
        return (self.hyper_w1.parameters() + self.hyper_b1.parameters()
                + self.hyper_w2.parameters() + self.hyper_b2.parameters())


class _AttentionStack:
    """All heads of one extractor as stacked tensors.

    Three dense layers per head, ReLU on the two 64-wide intermediate ones;
    the head axis rides along so one batched matmul evaluates every head at
    once.
    """

    def __init__(self, rng, n_heads: int, in_dim: int, out_dim: int, name: str,
                 width: int = 64):
        sizes = [in_dim, width, width, out_dim]
        self.weights = []
        self.biases = []
        for i in range(len(sizes) - 1):
            fan_in = sizes[i]
            self.weights.append(ad.Parameter(
                ad.fanin_uniform(rng, fan_in, (n_heads, fan_in, sizes[i + 1])),
                f"{name}.{i}.w"))
            self.biases.append(ad.Parameter(
                ad.fanin_uniform(rng, fan_in, (n_heads, sizes[i + 1])),
                f"{name}.{i}.b"))

    def __call__(self, x) -> Tensor:
        """[rows, in_dim] constant input -> [rows, n_heads, out_dim]."""
        out = ad.relu(ad.multihead_input(x, self.weights[0], self.biases[0]))
        out = ad.relu(ad.multihead_affine(out, self.weights[1], self.biases[1]))
        return ad.multihead_affine(out, self.weights[2], self.biases[2])

    def parameters(self):
        return self.weights + self.biases


class QplexMixer:
    """Duplex dueling factorization.

    Per-agent utilities split into a state value (max over actions) and
    advantages; both pass through monotonic transforms. The advantage
    transform is anchored at zero (its value at advantage 0 is subtracted) so
    greedy actions keep a transformed advantage of exactly zero, which is what
    preserves the argmax.

    Per-agent credits come from ten heads, each a positive state-driven gain
    times an agent-softmax share times a sigmoid gate over the joint action.
    Bounded gates keep the credit correction capped by the advantage
    magnitudes, which is what lets residual fitting pressure flow back into
    the utilities instead of being absorbed silently.
    """

    kind = "qplex"

    def __init__(self, rng, state, action_counts, n_heads: int = 10):
        self.state = Tensor(np.asarray(state, dtype=np.float64)[None, :])
        self.action_counts = list(action_counts)
        k = len(action_counts)
        s = self.state.shape[1]
        self.n_heads = n_heads
        self.transforms = [_MonotonicScalar(rng, s, f"mixer.mono{i}") for i in range(k)]
        self.gain = Affine(rng, s, n_heads, "mixer.att.gain")
        self.share = _AttentionStack(rng, n_heads, s, k, "mixer.att.share")
        gate_in = s + sum(action_counts)
        self.gate = _AttentionStack(rng, n_heads, gate_in, k, "mixer.att.gate")

    def _gate_inputs(self, enum: np.ndarray) -> np.ndarray:
        """One row per joint action: state ++ per-agent action one-hots."""
        s = self.state.value[0]
        rows = np.zeros((enum.shape[0], s.size + sum(self.action_counts)))
        rows[:, : s.size] = s
        offset = s.size
        for i, count in enumerate(self.action_counts):
            rows[np.arange(enum.shape[0]), offset + enum[:, i]] = 1.0
            offset += count
        return rows

    def credit_weights(self, enum: np.ndarray) -> Tensor:
        """Per-agent positive credits lambda, shape [n_joint, K]."""
        gains = ad.reshape(ad.absolute(self.gain(self.state)),
                           (1, self.n_heads, 1))
        shares = ad.softmax(self.share(self.state.value), axis=2)  # [1, H, K]
        gates = ad.sigmoid(self.gate(self._gate_inputs(enum)))     # [J, H, K]
        per_head = ad.mul(ad.mul(gains, shares), gates)
        credits = ad.reduce_sum(per_head, axis=1)                  # [J, K]
        k = len(self.action_counts)
        return ad.add(credits, Tensor(np.full((enum.shape[0], k), LAMBDA_FLOOR)))

    def joint_expected(self, q_list, enum, detach: bool = True) -> Tensor:
        # Value: sum_k V_k + sum_k lambda_k * A_k. With `detach`, gradient
        # routing follows the duplex-dueling practice: each utility
        # contributes V + A plus a (lambda - 1) correction on a stop-gradient
        # copy of A, so the agents feel an additive signal per chosen action
        # while the credits absorb the non-additive residual. The mixed
        # values are identical either way, so the argmax structure is
        # untouched; `detach=False` exposes the plain differentiable form for
        # gradient verification.
        out = None
        credits_t = ad.transpose(self.credit_weights(enum), (1, 0))  # [K, J]
        for i, q in enumerate(q_list):
            n_act = q.shape[0]
            v = ad.reduce_max(ad.reshape(q, (1, n_act)), axis=1)            # [1]
            adv = ad.sub(q, v)                                              # [A]
            col = ad.reshape(ad.concat([adv, Tensor(np.zeros(1))]), (n_act + 1, 1))
            transformed = ad.reshape(self.transforms[i](col, self.state), (n_act + 1,))
            anchor = ad.gather_rows(transformed, np.asarray([n_act]))
            adv_t = ad.sub(ad.gather_rows(transformed, np.arange(n_act)), anchor)
            v_t = ad.reshape(self.transforms[i](ad.reshape(v, (1, 1)), self.state), (1,))

            picked_adv = ad.gather_rows(adv_t, enum[:, i])                  # [J]
            credit = ad.reshape(ad.gather_rows(credits_t, np.asarray([i])),
                                (enum.shape[0],))
            if detach:
                correction = ad.mul(
                    ad.sub(credit, Tensor(np.ones(enum.shape[0]))),
                    Tensor(picked_adv.value),
                )
                term = ad.add(ad.add(picked_adv, correction), v_t)
            else:
                term = ad.add(ad.mul(credit, picked_adv), v_t)
            out = term if out is None else ad.add(out, term)
        return out

    def lambda_values(self, enum: np.ndarray) -> np.ndarray:
        return self.credit_weights(enum).value

    def parameters(self):
        params = []
        for t in self.transforms:
            params.extend(t.parameters())
        params.extend(self.gain.parameters())
        params.extend(self.share.parameters())
        params.extend(self.gate.parameters())
        return params


MIXER_CLASSES = {"vdn": VdnMixer, "qmix": QmixMixer, "qplex": QplexMixer}

MIXER_FAMILY = {
    "vdn": "vdn", "ddn": "vdn", "ddn-c51": "vdn",
    "qmix": "qmix", "dmix": "qmix", "dmix-c51": "qmix",
    "qplex": "qplex", "dplex": "qplex", "dplex-c51": "qplex",
}


def build_mixer(method: str, rng, state, action_counts):
    family = MIXER_FAMILY.get(method)
    if family is None:
        raise ValueError(f"unknown method {method!r}")
    return MIXER_CLASSES[family](rng, state, action_counts)


# ---------------------------------------------------------------------------
# functional forms of the expected mixers
# ---------------------------------------------------------------------------

def mix_vdn(utilities) -> float:
    utilities = np.asarray(utilities, dtype=np.float64)
    if utilities.size < 1:
        raise ValueError("vdn: need at least one utility")
    return float(utilities.sum())


def mix_qmix(utilities, mixer: QmixMixer) -> float:
    """Mix one vector of chosen utilities through the monotonic network."""
    q_list = [Tensor(np.asarray([u], dtype=np.float64)) for u in utilities]
    enum = np.zeros((1, len(q_list)), dtype=np.intp)
    return float(mixer.joint_expected(q_list, enum).value[0])


def mix_qplex(q_tables, chosen_actions, mixer: QplexMixer) -> float:
    """Joint value at one joint action from full per-agent utility tables."""
    q_list = [Tensor(np.asarray(t, dtype=np.float64)) for t in q_tables]
    enum = joint_enumeration(mixer.action_counts)
    values = mixer.joint_expected(q_list, enum).value
    return float(values[joint_index(chosen_actions, mixer.action_counts)])


# ---------------------------------------------------------------------------
# shape function and distributional mixing
# ---------------------------------------------------------------------------

def shape_sum(batches: list[QuantileBatch], means) -> QuantileBatch:
    """Additive shape function: sum of mean-centered quantile curves."""
    means = np.asarray(means, dtype=np.float64)
    if len(batches) != means.size or not batches:
        raise ValueError("shape sum: need one mean per quantile batch")
    levels = batches[0].levels
    for b in batches[1:]:
        if b.levels.shape != levels.shape or np.any(b.levels != levels):
            raise ValueError("shape sum: all batches must share the same levels")
    values = np.zeros_like(batches[0].values)
    for b, m in zip(batches, means):
        values = values + (b.values - m)
    return QuantileBatch(levels.copy(), values)


def dfac_mix(psi: float, phi: QuantileBatch) -> QuantileBatch:
    """Joint quantile curve: mean part plus zero-mean shape part."""
    est_mean = phi.mean()
    if abs(est_mean) > 1e-6:
        raise ValueError(f"shape part has non-zero estimator mean {est_mean}")
    return QuantileBatch(phi.levels.copy(), phi.values + float(psi))


def dfac_mix_c51(psi: float, centered: list[CategoricalDist], shared_support,
                 use_fft: bool = False):
    """Joint categorical: convolve centered PMFs, shift by the mean part.

    Every convolution step is followed by a neighbor projection onto the
    shared support, as is the final mean shift. Returns the projected
    distribution and the amount of mass moved by boundary clipping.
    """
    if not centered:
        raise ValueError("c51 mix: need at least one distribution")
    support = np.asarray(shared_support, dtype=np.float64)
    _check_uniform_support(support)
    for d in centered:
        if abs(d.mean()) > 1e-9:
            raise ValueError("c51 mix: inputs must be mean-centered")

    lo, hi = support[0], support[-1]

    def clipped_mass(atoms, probs):
        outside = (atoms < lo) | (atoms > hi)
        return float(probs[outside].sum())

    clipped = 0.0
    acc = centered[0]
    for d in centered[1:]:
        if use_fft and acc.atoms.size == d.atoms.size and np.allclose(
                np.diff(acc.atoms), np.diff(d.atoms).mean()):
            coeffs = conv_coefficients(acc.probs, d.probs, use_fft=True)
            total = coeffs.sum()
            coeffs = coeffs / total if total > 0 else coeffs
            dz = float(np.diff(acc.atoms)[0]) if acc.atoms.size > 1 else float(np.diff(support)[0])
            atoms = acc.atoms[0] + d.atoms[0] + dz * np.arange(coeffs.size)
            exact = CategoricalDist(atoms, coeffs)
        else:
            exact = convolve_pmf(acc, d)
        clipped += clipped_mass(exact.atoms, exact.probs)
        acc = project_categorical(exact.atoms, exact.probs, support)
    shifted_atoms = acc.atoms + float(psi)
    clipped += clipped_mass(shifted_atoms, acc.probs)
    out = project_categorical(shifted_atoms, acc.probs, support)
    return out, clipped


# ---------------------------------------------------------------------------
# autodiff ops for the categorical training path
# ---------------------------------------------------------------------------

def rowwise_conv_op(a: Tensor, b: Tensor, use_fft: bool = False) -> Tensor:
    """Row-by-row full convolution: [R, n] x [R, m] -> [R, n + m - 1]."""
    av, bv = a.value, b.value
    if av.shape[0] != bv.shape[0]:
        raise ValueError("rowwise conv: row counts differ")
    rows = av.shape[0]
    out = np.empty((rows, av.shape[1] + bv.shape[1] - 1))
    for r in range(rows):
        out[r] = conv_coefficients(av[r], bv[r], use_fft=use_fft)

    def back(g):
        ga = np.empty_like(av)
        gb = np.empty_like(bv)
        for r in range(rows):
            ga[r] = np.correlate(g[r], bv[r], mode="valid")
            gb[r] = np.correlate(g[r], av[r], mode="valid")
        return ga, gb

    return Tensor(out, (a, b), back)


def shift_project_op(probs: Tensor, shift: Tensor, src_atoms, support) -> Tensor:
    """Project row PMFs whose atoms are src_atoms + shift[r] onto `support`.

    Differentiable in both the probabilities (linear) and the per-row shift
    (piecewise linear neighbor weights).
    """
    src_atoms = np.asarray(src_atoms, dtype=np.float64)
    support = np.asarray(support, dtype=np.float64)
    rows = probs.shape[0]
    if shift.value.shape not in ((rows,), ()):
        raise ValueError("shift projection: shift must be scalar or one per row")
    shifts = np.broadcast_to(shift.value, (rows,))
    w = np.empty((rows, support.size, src_atoms.size))
    dw = np.empty_like(w)
    for r in range(rows):
        w[r], dw[r] = projection_weights(src_atoms, support, shift=float(shifts[r]))
    out = np.einsum("rnm,rm->rn", w, probs.value)

    def back(g):
        gp = np.einsum("rnm,rn->rm", w, g)
        gs = np.einsum("rn,rnm,rm->r", g, dw, probs.value)
        if shift.value.shape == ():
            gs = gs.sum()
        return gp, gs

    return Tensor(out, (probs, shift), back)


def categorical_joint_op(prob_rows: list[Tensor], q_rows: list[Tensor],
                         psi: Tensor, support, use_fft: bool = False) -> Tensor:
    """Differentiable joint PMF table, mirroring `dfac_mix_c51` row by row.

    `prob_rows[k]` holds agent k's PMF per joint action [n_joint, n_atoms] and
    `q_rows[k]` the matching means; centering is realized as an atom shift, so
    the convolution coefficients depend only on the probabilities.
    """
    support = np.asarray(support, dtype=np.float64)
    ext = _extended_support(support)
    acc = prob_rows[0]
    acc_shift = ad.scale(q_rows[0], -1.0)
    for k in range(1, len(prob_rows)):
        coeffs = rowwise_conv_op(acc, prob_rows[k], use_fft=use_fft)
        shift = ad.add(acc_shift, ad.scale(q_rows[k], -1.0))
        acc = shift_project_op(coeffs, shift, ext, support)
        acc_shift = Tensor(np.zeros(acc.shape[0]))
    if len(prob_rows) == 1:
        psi = ad.add(psi, acc_shift)
    return shift_project_op(acc, psi, support, support)


def quantile_joint_op(value_rows: list[Tensor], q_rows: list[Tensor],
                      psi: Tensor) -> Tensor:
    """Joint quantile values: psi plus the sum of centered agent curves.

    `value_rows[k]`: [n_joint, n_levels] agent curves at shared levels;
    `q_rows[k]`: matching estimator means, so the shape part sums to zero.
    """
    shape = None
    for values, means in zip(value_rows, q_rows):
        centered = ad.sub(values, ad.reshape(means, (means.shape[0], 1)))
        shape = centered if shape is None else ad.add(shape, centered)
    return ad.add(ad.reshape(psi, (psi.shape[0], 1)), shape)


# ---------------------------------------------------------------------------
# the argmax-consistency audit
# ---------------------------------------------------------------------------

def check_digm(per_agent_q, joint_q, action_counts=None) -> bool:
    """True iff the joint argmax matches the tuple of per-agent argmaxes.

    Both sides break ties toward the lowest index; the joint table must be in
    row-major enumeration order.
    """
    per_agent_q = [np.asarray(q, dtype=np.float64) for q in per_agent_q]
    joint_q = np.asarray(joint_q, dtype=np.float64)
    counts = action_counts or [q.size for q in per_agent_q]
    expected = int(np.prod(counts))
    if joint_q.size != expected:
        raise ValueError(f"joint table has {joint_q.size} entries, expected {expected}")
    greedy = [int(np.argmax(q)) for q in per_agent_q]
    return int(np.argmax(joint_q)) == joint_index(greedy, counts)
