"""Factored concurrent-action policy heads over a shared MLP trunk.

Two head modes:

* ``maps`` -- one independent Bernoulli marginal per primitive action; any
  subset of actions (including none) may fire in a single step.  The joint
  probability of a binary mask is the product of its per-action marginals.
* ``saps`` -- single-action baseline: a categorical over the N primitive
  actions plus an explicit no-op outcome, emitted as a one-hot mask (all
  zeros for no-op).

Both modes share one trunk with a scalar value head.  Probabilities are
clamped to [PROB_CLAMP, 1-PROB_CLAMP] before any logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Dense, Node, ParameterStore, Tape
from .numerics import autodiff as ad

PROB_CLAMP = 1e-6


@dataclass
class PolicyConfig:
    n_actions: int = 7
    obs_dim: int = 4 * 6 * 11 * 11
    feature_dim: int = 2
    hidden: tuple[int, ...] = (128, 128)
    mode: str = "maps"  # "maps" or "saps"
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.mode not in ("maps", "saps"):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.n_actions < 1:
            raise ValueError("n_actions must be >= 1")

    @property
    def head_dim(self) -> int:
        # SAPS gets the appended no-op outcome.
        return self.n_actions + 1 if self.mode == "saps" else self.n_actions


@dataclass
class PolicyOutput:
    """Per-sample action probabilities plus state-value estimate.

    ``probs`` is (B, N) of Bernoulli marginals in maps mode, or (B, N+1)
    simplex rows in saps mode.  ``value`` is (B,).
    """

    probs: Node
    value: Node
    mode: str


class PolicyNetwork:
    """Shared-trunk policy/value network.

    Trunk: dense(obs -> h1), tanh, [dropout], concat game features,
    dense(-> h2), tanh, [dropout]; heads: action logits and scalar value.
    Dropout applies only when ``dropout_enabled`` (the expert-data stream);
    live-agent forward passes never use it.
    """

    def __init__(self, cfg: PolicyConfig, store: ParameterStore | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.store = store if store is not None else ParameterStore()
        if rng is None:
            rng = np.random.default_rng(0)
        h1, h2 = cfg.hidden
        self.l1 = Dense(self.store, "policy/trunk1", cfg.obs_dim, h1, rng)
        self.l2 = Dense(self.store, "policy/trunk2", h1 + cfg.feature_dim, h2, rng)
        self.action_head = Dense(self.store, "policy/action_head", h2, cfg.head_dim, rng)
        self.value_head = Dense(self.store, "policy/value_head", h2, 1, rng)

    def value_head_param_names(self) -> list[str]:
        return ["policy/value_head/w", "policy/value_head/b"]

    def predict_probs(self, obs, features) -> np.ndarray:
        """Inference-only marginals (no tape, no dropout)."""
        return self.forward(obs, features).probs.data

    def forward(self, obs, features, tape: Tape | None = None,
                dropout_enabled: bool = False,
                dropout_rng: np.random.Generator | None = None) -> PolicyOutput:
        """Run the network on a batch of stacked observations.

        ``obs`` is (B, obs_dim); ``features`` is (B, feature_dim) already
        normalized to [0, 1].  Passing a tape records the forward pass for
        backpropagation; ``tape=None`` is the inference path.
        """
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if obs.shape[1] != self.cfg.obs_dim:
            raise ValueError(f"observation width {obs.shape[1]}, expected {self.cfg.obs_dim}")
        if features.shape[1] != self.cfg.feature_dim:
            raise ValueError(f"feature width {features.shape[1]}, expected {self.cfg.feature_dim}")
        if obs.shape[0] != features.shape[0]:
            raise ValueError("observation/feature batch sizes differ")
        use_dropout = dropout_enabled and self.cfg.dropout_rate > 0.0
        if use_dropout and dropout_rng is None:
            raise ValueError("dropout_enabled requires a dropout_rng")

        x = Node(obs)
        h = ad.tanh(tape, self.l1(tape, x))
        if use_dropout:
            h = ad.dropout(tape, h, self.cfg.dropout_rate, dropout_rng)
        h = ad.concat(tape, [h, Node(features)], axis=1)
        h = ad.tanh(tape, self.l2(tape, h))
        if use_dropout:
            h = ad.dropout(tape, h, self.cfg.dropout_rate, dropout_rng)

        logits = self.action_head(tape, h)
        if self.cfg.mode == "maps":
            probs = ad.sigmoid(tape, logits)
        else:
            probs = ad.softmax_rows(tape, logits)
        value = ad.reshape(tape, self.value_head(tape, h), (obs.shape[0],))
        return PolicyOutput(probs=probs, value=value, mode=self.cfg.mode)


def sample_mask(out: PolicyOutput, rng: np.random.Generator) -> np.ndarray:
    """Draw action masks, one row per batch element.

    maps: each component independently Bernoulli(prob).  saps: one
    categorical draw over N+1 outcomes; the no-op outcome maps to the
    all-zeros mask.
    """
    p = out.probs.data
    if out.mode == "maps":
        return (rng.random(p.shape) < p).astype(np.uint8)
    n = p.shape[1] - 1
    cum = np.cumsum(p, axis=1)
    u = rng.random((p.shape[0], 1)) * cum[:, -1:]
    idx = (u >= cum).sum(axis=1)
    masks = np.zeros((p.shape[0], n), dtype=np.uint8)
    for row, k in enumerate(idx):
        if k < n:
            masks[row, k] = 1
    return masks


def saps_index(masks: np.ndarray, n_actions: int) -> np.ndarray:
    """Map one-hot/zero masks to categorical indices (no-op -> N)."""
    masks = np.atleast_2d(masks)
    sums = masks.sum(axis=1)
    if np.any(sums > 1):
        raise ValueError("saps masks must have at most one set bit")
    idx = np.full(masks.shape[0], n_actions, dtype=np.int64)
    rows, cols = np.nonzero(masks)
    idx[rows] = cols
    return idx


def clamped_probs(tape: Tape | None, out: PolicyOutput) -> Node:
    return ad.clip(tape, out.probs, PROB_CLAMP, 1.0 - PROB_CLAMP)


def mask_log_prob(tape: Tape | None, masks, out: PolicyOutput) -> Node:
    """Exact joint log-probability of each mask row under the policy.

    maps route: sum_i log(a_i * p_i + (1 - a_i) * (1 - p_i)), the factored
    product form.  saps route: log of the chosen categorical entry.
    Differentiable through the probabilities.
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    p = clamped_probs(tape, out)
    if out.mode == "maps":
        if masks.shape != p.data.shape:
            raise ValueError(f"mask shape {masks.shape} vs probs {p.data.shape}")
        agree = ad.add(tape, ad.mul(tape, p, masks),
                       ad.mul(tape, ad.sub(tape, 1.0, p), 1.0 - masks))
        return ad.reduce_sum(tape, ad.log(tape, agree), axis=1)
    n = p.data.shape[1] - 1
    idx = saps_index(masks.astype(np.uint8), n)
    onehot = np.zeros_like(p.data)
    onehot[np.arange(len(idx)), idx] = 1.0
    return ad.reduce_sum(tape, ad.mul(tape, ad.log(tape, p), onehot), axis=1)


def cross_entropy(tape: Tape | None, masks, out: PolicyOutput) -> Node:
    """Per-row cross-entropy H(a, p) = -sum_i [a_i log p_i + (1-a_i) log(1-p_i)].

    This is the loss-side route; it equals -mask_log_prob for binary masks
    in maps mode but is computed from the complementary formula.
    """
    if out.mode != "maps":
        raise ValueError("cross_entropy applies to maps-mode outputs")
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    p = clamped_probs(tape, out)
    if masks.shape != p.data.shape:
        raise ValueError(f"mask shape {masks.shape} vs probs {p.data.shape}")
    pos = ad.mul(tape, ad.log(tape, p), masks)
    neg_ = ad.mul(tape, ad.log(tape, ad.sub(tape, 1.0, p)), 1.0 - masks)
    return ad.neg(tape, ad.reduce_sum(tape, ad.add(tape, pos, neg_), axis=1))


def mask_entropy(tape: Tape | None, out: PolicyOutput) -> Node:
    """Entropy per batch row: sum of Bernoulli entropies (maps) or the
    categorical entropy (saps).  Maximal at n*ln(2) / ln(n+1) respectively."""
    p = clamped_probs(tape, out)
    if out.mode == "maps":
        q = ad.sub(tape, 1.0, p)
        terms = ad.add(tape, ad.mul(tape, p, ad.log(tape, p)),
                       ad.mul(tape, q, ad.log(tape, q)))
        return ad.neg(tape, ad.reduce_sum(tape, terms, axis=1))
    return ad.neg(tape, ad.reduce_sum(tape, ad.mul(tape, p, ad.log(tape, p)), axis=1))


def greedy_mask(out: PolicyOutput, threshold: float = 0.5) -> np.ndarray:
    """Deterministic evaluation-time action choice.

    maps: per-action threshold, ties at exactly ``threshold`` resolve to 1.
    saps: argmax outcome (lowest index on ties), no-op -> zero mask.
    """
    p = out.probs.data
    if out.mode == "maps":
        return (p >= threshold).astype(np.uint8)
    n = p.shape[1] - 1
    idx = p.argmax(axis=1)
    masks = np.zeros((p.shape[0], n), dtype=np.uint8)
    for row, k in enumerate(idx):
        if k < n:
            masks[row, k] = 1
    return masks
