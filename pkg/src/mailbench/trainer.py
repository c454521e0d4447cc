"""Batched synchronous actor-critic with an expert-imitation auxiliary loss.

One update processes M fixed-length rollouts of live experience plus (in
imitation modes) a noisy batch of demonstrations.  The descent objective is

    L = (1/M) sum_rollouts sum_t H(a_t, p(s_t)) * A_t        (live term)
      + lambda(step) * (1/M) sum_e H(a_e, p(s_e))            (expert term)
      + c_v * mean_k (R_k - V(s_k))^2                        (critic)
      - beta * mean_t entropy(p(s_t))                        (exploration)

where H is the per-step action cross-entropy and A_t the detached
advantage.  Expert samples pass through the network with dropout on and
contribute nothing to the critic; live samples never see dropout.  The
imitation weight decays linearly to zero, after which updates coincide
exactly with the plain actor-critic ones.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import policy as pol
from .arena import ArenaEnv, EnvConfig
from .config import TrainConfig
from .expert_data import DemoDataset, heldout_action_accuracy, sample_expert_batch
from .numerics import (NonFiniteGradientError, ParameterStore, Tape,
                       adam_step, clip_global_norm, save_arrays, load_arrays)
from .numerics import autodiff as ad
from .stacking import FrameStacker


class TrainingAbort(RuntimeError):
    """Raised when a non-finite loss or gradient is detected; parameters
    are left untouched."""


@dataclass
class Rollout:
    """T consecutive transitions from one actor.

    ``terminals[t]`` marks episode ends inside the window; the return
    recursion restarts there.  ``bootstrap`` is the critic's estimate for
    the state after the final transition, zero when that transition is
    terminal.
    """
    obs: np.ndarray        # (T, obs_dim) stacked observations
    features: np.ndarray   # (T, feature_dim)
    masks: np.ndarray      # (T, n_actions) uint8
    rewards: np.ndarray    # (T,)
    terminals: np.ndarray  # (T,) bool
    values: np.ndarray     # (T,) collection-time critic output
    log_probs: np.ndarray  # (T,) collection-time joint log-prob
    bootstrap: float


def n_step_returns(rollout: Rollout, gamma: float) -> np.ndarray:
    """Backward recursion R_t = r_t + gamma * R_{t+1}, truncated at
    terminals and seeded with the bootstrap value."""
    T = len(rollout.rewards)
    out = np.empty(T)
    acc = 0.0 if rollout.terminals[-1] else float(rollout.bootstrap)
    for t in range(T - 1, -1, -1):
        if rollout.terminals[t]:
            acc = float(rollout.rewards[t])
        else:
            acc = float(rollout.rewards[t]) + gamma * acc
        out[t] = acc
    return out


def advantages(returns: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Detached advantage estimates; never differentiated through."""
    returns = np.asarray(returns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if returns.shape != values.shape:
        raise ValueError(f"shape mismatch {returns.shape} vs {values.shape}")
    return returns - values


def lambda_schedule(step: int, decay_steps: int, lam0: float = 1.0,
                    decay_start: int = 0) -> float:
    """Linear decay lam0 -> 0 over ``decay_steps``, flat before
    ``decay_start`` and clamped at zero afterwards."""
    if decay_steps <= 0:
        raise ValueError("decay_steps must be positive")
    t = max(0, step - decay_start)
    return lam0 * max(0.0, 1.0 - t / decay_steps)


def lr_schedule(step: int, total_steps: int, lr_start: float = 1e-4,
                lr_end: float = 1e-5) -> float:
    """Linear ramp between the endpoint learning rates."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    frac = min(1.0, step / total_steps)
    return lr_start + (lr_end - lr_start) * frac


@dataclass
class UpdateMetrics:
    loss_total: float = 0.0
    loss_policy_live: float = 0.0
    loss_policy_expert: float = 0.0
    loss_value: float = 0.0
    entropy: float = 0.0
    lambda_e: float = 0.0
    lr: float = 0.0
    grad_norm: float = 0.0
    expert_term: float = 0.0  # lambda * scale * mean expert cross-entropy


class MailTrainer:
    """Owns the parameters, the actor envs, and the update loop for one
    (mode, seed) training cell."""

    def __init__(self, cfg: TrainConfig, env_cfg: EnvConfig | None = None,
                 expert: DemoDataset | None = None, eval_only: bool = False):
        self.cfg = cfg
        self.env_cfg = env_cfg if env_cfg is not None else EnvConfig()
        if cfg.uses_expert and expert is None and not eval_only:
            raise ValueError(f"mode {cfg.mode!r} requires an expert dataset")
        self.expert = expert

        obs_dim = cfg.stack_depth * int(np.prod(self.env_cfg.obs_shape))
        pcfg = pol.PolicyConfig(
            n_actions=self.env_cfg.n_actions, obs_dim=obs_dim,
            feature_dim=2, hidden=(cfg.hidden1, cfg.hidden2),
            mode=cfg.policy_kind, dropout_rate=cfg.dropout_rate)

        # Independent named streams so that optional branches (expert
        # sampling, dropout) never perturb the live-rollout randomness.
        ss = np.random.SeedSequence(cfg.seed)
        keys = ("init", "action", "env_seeds", "expert", "dropout", "eval")
        children = ss.spawn(len(keys))
        self.rngs = {k: np.random.default_rng(c) for k, c in zip(keys, children)}

        self.store = ParameterStore()
        self.net = pol.PolicyNetwork(pcfg, self.store, self.rngs["init"])

        self.envs = [ArenaEnv(self.env_cfg) for _ in range(cfg.n_actors)]
        self.stackers = [FrameStacker(cfg.stack_depth) for _ in range(cfg.n_actors)]
        self._stacked = [None] * cfg.n_actors
        self._features = [None] * cfg.n_actors
        self._episode_scores = [0.0] * cfg.n_actors
        self.completed_scores: list[float] = []
        self.incidents = 0
        for i, env in enumerate(self.envs):
            self._reset_actor(i)

        self.env_steps = 0
        self.updates = 0

    # -- actors -------------------------------------------------------------

    def _next_episode_seed(self) -> int:
        return int(self.rngs["env_seeds"].integers(0, 2 ** 31 - 1))

    def _reset_actor(self, i: int) -> None:
        _, frame = self.envs[i].reset(self._next_episode_seed())
        self._stacked[i] = self.stackers[i].reset(frame.flat)
        self._features[i] = frame.features
        self._episode_scores[i] = 0.0

    def collect_rollouts(self) -> list[Rollout]:
        """Step every actor T times with sampled masks (no dropout, no
        input noise); envs persist across calls so episodes continue."""
        cfg = self.cfg
        M, T = cfg.n_actors, cfg.rollout_len
        obs_dim = self.net.cfg.obs_dim
        obs = np.empty((M, T, obs_dim))
        feats = np.empty((M, T, 2))
        masks = np.empty((M, T, self.env_cfg.n_actions), dtype=np.uint8)
        rewards = np.empty((M, T))
        terminals = np.zeros((M, T), dtype=bool)
        values = np.empty((M, T))
        log_probs = np.empty((M, T))

        for t in range(T):
            batch_obs = np.stack([self._stacked[i] for i in range(M)])
            batch_feat = np.stack([self._features[i] for i in range(M)])
            out = self.net.forward(batch_obs, batch_feat)
            step_masks = pol.sample_mask(out, self.rngs["action"])
            lp = pol.mask_log_prob(None, step_masks, out).data
            for i in range(M):
                obs[i, t] = batch_obs[i]
                feats[i, t] = batch_feat[i]
                masks[i, t] = step_masks[i]
                values[i, t] = out.value.data[i]
                log_probs[i, t] = lp[i]
                try:
                    _, frame, reward, done = self.envs[i].step(step_masks[i])
                except ValueError:
                    raise
                except Exception:
                    # env fault: restart the actor, keep training
                    self.incidents += 1
                    self._reset_actor(i)
                    rewards[i, t] = 0.0
                    terminals[i, t] = True
                    continue
                rewards[i, t] = reward
                terminals[i, t] = done
                self._episode_scores[i] += reward
                if done:
                    self.completed_scores.append(self._episode_scores[i])
                    self._reset_actor(i)
                else:
                    self._stacked[i] = self.stackers[i].push(frame.flat)
                    self._features[i] = frame.features
        self.env_steps += M * T

        boot_obs = np.stack([self._stacked[i] for i in range(M)])
        boot_feat = np.stack([self._features[i] for i in range(M)])
        boot_values = self.net.forward(boot_obs, boot_feat).value.data

        rollouts = []
        for i in range(M):
            boot = 0.0 if terminals[i, -1] else float(boot_values[i])
            rollouts.append(Rollout(
                obs=obs[i], features=feats[i], masks=masks[i],
                rewards=rewards[i], terminals=terminals[i],
                values=values[i], log_probs=log_probs[i], bootstrap=boot))
        return rollouts

    # -- losses -------------------------------------------------------------

    def policy_loss_live(self, tape: Tape | None, out: pol.PolicyOutput,
                         masks: np.ndarray, advs: np.ndarray):
        """(1/M) sum_t H(a_t, p_t) * A_t with A detached.  In saps mode the
        cross-entropy degenerates to -log p(chosen outcome)."""
        if out.mode == "maps":
            ce = pol.cross_entropy(tape, masks, out)
        else:
            ce = ad.neg(tape, pol.mask_log_prob(tape, masks, out))
        weighted = ad.mul(tape, ce, np.asarray(advs, dtype=np.float64))
        return ad.mul(tape, ad.reduce_sum(tape, weighted), 1.0 / self.cfg.n_actors)

    def policy_loss_expert(self, tape: Tape | None, out: pol.PolicyOutput,
                           masks: np.ndarray):
        """Mean per-sample cross-entropy against expert masks."""
        ce = pol.cross_entropy(tape, masks, out)
        return ad.reduce_mean(tape, ce)

    def value_loss(self, tape: Tape | None, out: pol.PolicyOutput,
                   returns: np.ndarray):
        diff = ad.sub(tape, out.value, np.asarray(returns, dtype=np.float64))
        return ad.reduce_mean(tape, ad.mul(tape, diff, diff))

    # -- update -------------------------------------------------------------

    def mail_update(self, rollouts: list[Rollout],
                    expert_batch: tuple | None, step: int | None = None) -> UpdateMetrics:
        """One combined gradient step.  ``expert_batch`` is the
        (obs, features, masks) triple from sample_expert_batch, or None in
        td-only operation.  ``step`` is the env-step clock for schedules.
        """
        cfg = self.cfg
        if step is None:
            step = self.env_steps
        lam = self._lambda_at(step)
        lr = lr_schedule(step, cfg.total_steps, cfg.lr_start, cfg.lr_end)
        m = UpdateMetrics(lambda_e=lam, lr=lr)

        tape = Tape()
        terms = []

        if cfg.live_gradient:
            obs = np.concatenate([r.obs for r in rollouts])
            feats = np.concatenate([r.features for r in rollouts])
            masks = np.concatenate([r.masks for r in rollouts])
            rets = np.concatenate([n_step_returns(r, cfg.gamma) for r in rollouts])
            vals = np.concatenate([r.values for r in rollouts])
            advs = advantages(rets, vals)
            out = self.net.forward(obs, feats, tape=tape)
            live = self.policy_loss_live(tape, out, masks, advs)
            vloss = self.value_loss(tape, out, rets)
            ent = ad.reduce_mean(tape, pol.mask_entropy(tape, out))
            terms.append(live)
            terms.append(ad.mul(tape, vloss, cfg.value_coef))
            if cfg.entropy_coef != 0.0:
                terms.append(ad.mul(tape, ent, -cfg.entropy_coef))
            m.loss_policy_live = float(live.data)
            m.loss_value = float(vloss.data)
            m.entropy = float(ent.data)

        # The expert branch is skipped entirely at lambda == 0 so that a
        # decayed imitation run consumes identical RNG state to a td-only
        # run and produces bit-identical updates.
        if expert_batch is not None and lam > 0.0:
            e_obs, e_feats, e_masks = expert_batch
            e_out = self.net.forward(e_obs, e_feats, tape=tape,
                                     dropout_enabled=True,
                                     dropout_rng=self.rngs["dropout"])
            e_mean = self.policy_loss_expert(tape, e_out, e_masks)
            # Per-sample weight matching the live term: the grouped-sum
            # form sum_e H / M equals mean * (K_E / M).
            scale = lam * len(e_masks) / cfg.n_actors
            terms.append(ad.mul(tape, e_mean, scale))
            m.loss_policy_expert = float(e_mean.data)
            m.expert_term = scale * float(e_mean.data)

        if not terms:
            raise ValueError("update has no loss terms; check mode/config")
        total = terms[0]
        for term in terms[1:]:
            total = ad.add(tape, total, term)
        m.loss_total = float(total.data)
        if not math.isfinite(m.loss_total):
            raise TrainingAbort(
                f"non-finite loss at env step {step}: total={m.loss_total} "
                f"live={m.loss_policy_live} value={m.loss_value} "
                f"expert={m.loss_policy_expert} entropy={m.entropy}")

        self.store.zero_grads()
        tape.backward(total)
        m.grad_norm = clip_global_norm(self.store, cfg.grad_clip)
        if not math.isfinite(m.grad_norm):
            raise TrainingAbort(f"non-finite gradient norm at env step {step}")
        try:
            adam_step(self.store, lr)
        except NonFiniteGradientError as exc:
            raise TrainingAbort(f"non-finite gradient: {exc}") from exc
        self.updates += 1
        return m

    def _lambda_at(self, step: int) -> float:
        cfg = self.cfg
        if not cfg.uses_expert:
            return 0.0
        if cfg.mode == "il-only":
            return cfg.lambda0  # held constant; no decay in pure imitation
        return lambda_schedule(step, cfg.decay_steps, cfg.lambda0,
                               cfg.lambda_decay_start)

    def draw_expert_batch(self):
        cfg = self.cfg
        if not cfg.uses_expert or self._lambda_at(self.env_steps) <= 0.0:
            return None
        return sample_expert_batch(
            self.expert, cfg.expert_batch, self.rngs["expert"],
            obs_std=cfg.obs_noise_std, feat_std=cfg.feature_noise_std,
            depth=cfg.stack_depth)

    def train_step(self) -> UpdateMetrics:
        rollouts = self.collect_rollouts()
        expert_batch = self.draw_expert_batch()
        return self.mail_update(rollouts, expert_batch)

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, episodes: int | None = None,
                 seed_base: int = 10_000) -> dict:
        """Greedy-threshold evaluation on fixed seeds; reports score
        statistics and mean simultaneous actions per step."""
        cfg = self.cfg
        n = episodes if episodes is not None else cfg.eval_episodes
        env = ArenaEnv(self.env_cfg)
        stacker = FrameStacker(cfg.stack_depth)
        scores = []
        action_counts = []
        for e in range(n):
            _, frame = env.reset(seed_base + e)
            stacked = stacker.reset(frame.flat)
            score = 0.0
            for _ in range(self.env_cfg.horizon):
                out = self.net.forward(stacked[None, :], frame.features[None, :])
                mask = pol.greedy_mask(out)[0]
                action_counts.append(int(mask.sum()))
                _, frame, reward, done = env.step(mask)
                score += reward
                if done:
                    break
                stacked = stacker.push(frame.flat)
            scores.append(score)
        return {
            "eval_score_mean": float(np.mean(scores)),
            "eval_score_std": float(np.std(scores)),
            "eval_scores": scores,
            "eval_actions_mean": float(np.mean(action_counts)),
        }

    def heldout_accuracy(self) -> float | None:
        if self.expert is None or len(self.expert.heldout_indices) == 0:
            return None
        return heldout_action_accuracy(self.expert, self.net,
                                       depth=self.cfg.stack_depth)

    # -- checkpointing ------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        arrays = self.store.state_arrays()
        arrays["meta/env_steps"] = np.array([self.env_steps], dtype=np.float64)
        arrays["meta/updates"] = np.array([self.updates], dtype=np.float64)
        save_arrays(path, arrays)

    def load_checkpoint(self, path) -> None:
        arrays = load_arrays(path)
        self.env_steps = int(arrays.pop("meta/env_steps")[0])
        self.updates = int(arrays.pop("meta/updates")[0])
        self.store.load_state_arrays(arrays)


def train(cfg: TrainConfig, env_cfg: EnvConfig | None = None,
          expert: DemoDataset | None = None, metrics_path=None,
          checkpoint_path=None, resume_from=None,
          progress=None) -> dict:
    """Run one training cell to its step budget.

    Writes an incremental CSV of metrics (when ``metrics_path`` given), a
    final checkpoint (when ``checkpoint_path`` given), and returns a
    summary with the evaluation history.
    """
    trainer = MailTrainer(cfg, env_cfg, expert)
    if resume_from is not None:
        trainer.load_checkpoint(resume_from)

    fieldnames = ["step", "mode", "seed", "updates", "eval_score_mean",
                  "eval_score_std", "eval_actions_mean", "heldout_accuracy",
                  "loss_total", "loss_policy_live", "loss_policy_expert",
                  "loss_value", "entropy", "lambda_e", "lr", "grad_norm",
                  "train_score_mean", "wall_time"]
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()

    t0 = time.time()
    eval_history = []
    next_eval = 0
    next_checkpoint = (cfg.checkpoint_interval
                       if cfg.checkpoint_interval > 0 else None)
    last_metrics = UpdateMetrics()

    def emit(row: dict) -> None:
        if writer is not None:
            writer.writerow(row)
            fh.flush()

    def run_eval() -> None:
        stats = trainer.evaluate()
        acc = trainer.heldout_accuracy()
        eval_history.append({"step": trainer.env_steps, **stats,
                             "heldout_accuracy": acc})
        row = {"step": trainer.env_steps, "mode": cfg.mode, "seed": cfg.seed,
               "updates": trainer.updates,
               "eval_score_mean": round(stats["eval_score_mean"], 6),
               "eval_score_std": round(stats["eval_score_std"], 6),
               "eval_actions_mean": round(stats["eval_actions_mean"], 6),
               "heldout_accuracy": "" if acc is None else round(acc, 6),
               "lambda_e": trainer._lambda_at(trainer.env_steps),
               "lr": lr_schedule(trainer.env_steps, cfg.total_steps,
                                 cfg.lr_start, cfg.lr_end),
               "wall_time": round(time.time() - t0, 3)}
        emit(row)
        if progress is not None:
            progress(f"[{cfg.mode} seed {cfg.seed}] step {trainer.env_steps} "
                     f"eval {stats['eval_score_mean']:.2f}"
                     f"±{stats['eval_score_std']:.2f}"
                     + (f" acc {acc:.3f}" if acc is not None else ""))

    while trainer.env_steps < cfg.total_steps:
        if trainer.env_steps >= next_eval:
            run_eval()
            next_eval += cfg.eval_interval
        last_metrics = trainer.train_step()
        if trainer.updates % cfg.log_interval == 0:
            train_mean = (np.mean(trainer.completed_scores[-20:])
                          if trainer.completed_scores else float("nan"))
            emit({"step": trainer.env_steps, "mode": cfg.mode,
                  "seed": cfg.seed, "updates": trainer.updates,
                  "loss_total": round(last_metrics.loss_total, 6),
                  "loss_policy_live": round(last_metrics.loss_policy_live, 6),
                  "loss_policy_expert": round(last_metrics.loss_policy_expert, 6),
                  "loss_value": round(last_metrics.loss_value, 6),
                  "entropy": round(last_metrics.entropy, 6),
                  "lambda_e": last_metrics.lambda_e,
                  "lr": last_metrics.lr,
                  "grad_norm": round(last_metrics.grad_norm, 6),
                  "train_score_mean": round(float(train_mean), 6),
                  "wall_time": round(time.time() - t0, 3)})
        if next_checkpoint is not None and trainer.env_steps >= next_checkpoint:
            if checkpoint_path is not None:
                trainer.save_checkpoint(checkpoint_path)
            next_checkpoint += cfg.checkpoint_interval

    run_eval()  # final evaluation at the exact budget
    if checkpoint_path is not None:
        trainer.save_checkpoint(checkpoint_path)
    if fh is not None:
        fh.close()
    return {"trainer": trainer, "eval_history": eval_history,
            "final": eval_history[-1], "wall_time": time.time() - t0,
            "incidents": trainer.incidents}
