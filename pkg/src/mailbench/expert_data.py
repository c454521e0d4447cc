"""Demonstration dataset pipeline: recording, persistence, held-out
splitting, and noisy batch sampling for the imitation loss.

Files are line-delimited JSON so they diff cleanly and can be produced by
either the scripted oracle or the browser recorder.  Layout:

    header    {"kind": "demo", "version": 1, "n_actions": ..., "obs_shape":
               [...], "feature_dim": ..., "source": "scripted"|"human",
               "seed": ..., "env": {...}}
    episode   {"ep": <episode seed or session id>}
    step      {"o": <base64 of bit-packed observation tensor>,
               "f": [features...], "m": "0100110", "r": reward,
               "t": 0|1 terminal flag}
    trailer   {"end": true, "steps": N, "episodes": E, "scores": [...],
               "sha256": <hex digest of every preceding byte>}

Observation tensors are binary occupancy grids, so each frame packs to
ceil(C*K*K / 8) bytes before base64.  One frame is stored per step; the
stacked network input is reconstructed at sample time, which keeps files
roughly stack-depth times smaller.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .arena import ArenaEnv, EnvConfig, env_config_dict, scripted_expert
from .stacking import STACK_DEPTH

FORMAT_KIND = "demo"
FORMAT_VERSION = 1
HELDOUT_EVERY = 10  # every 10th episode is held out

OBS_NOISE_STD = 0.1
FEATURE_NOISE_STD = 0.3


class DemoLoadError(Exception):
    """Base class for demo-file load failures."""


class DemoVersionError(DemoLoadError):
    pass


class DemoTruncatedError(DemoLoadError):
    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (at byte offset {byte_offset})")
        self.byte_offset = byte_offset


class DemoChecksumError(DemoLoadError):
    pass


@dataclass
class ExpertSample:
    """One recorded step: what the demonstrator saw and did."""
    observation: np.ndarray  # (C, K, K) binary tensor, single frame
    features: np.ndarray     # normalized game features
    mask: np.ndarray         # pressed-action bits, length N
    reward: float
    terminal: bool


class DemoDataset:
    """Immutable store of demonstration episodes.

    Rewards and terminal flags are recorded for fidelity with the original
    capture list but are deliberately unused by training: demonstrations
    feed only the imitation loss, never the value target.
    """

    def __init__(self, frames: np.ndarray, features: np.ndarray,
                 masks: np.ndarray, rewards: np.ndarray, terminals: np.ndarray,
                 episode_ids: np.ndarray, scores: list[float], source: str,
                 seed: int | None, env_config: dict, obs_shape: tuple[int, ...]):
        self.frames = frames          # (N, obs_flat) uint8
        self.features = features      # (N, F) float64
        self.masks = masks            # (N, A) uint8
        self.rewards = rewards
        self.terminals = terminals
        self.episode_ids = episode_ids  # (N,) index into episodes, 0-based
        self.scores = scores
        self.source = source
        self.seed = seed
        self.env_config = env_config
        self.obs_shape = tuple(obs_shape)
        self.n_actions = masks.shape[1]
        self.feature_dim = features.shape[1]

        n_eps = int(episode_ids[-1]) + 1 if len(episode_ids) else 0
        self.n_episodes = n_eps
        self.episode_starts = np.zeros(n_eps, dtype=np.int64)
        for e in range(1, n_eps):
            self.episode_starts[e] = int(np.searchsorted(episode_ids, e))
        # Held-out split by whole episodes, fixed by position, never by RNG.
        held_eps = [e for e in range(n_eps) if e % HELDOUT_EVERY == HELDOUT_EVERY - 1]
        if not held_eps and n_eps >= 2:
            held_eps = [n_eps - 1]
        self.heldout_episodes = held_eps
        all_idx = np.arange(len(episode_ids))
        in_held = np.isin(episode_ids, held_eps)
        self.heldout_indices = all_idx[in_held]
        self.train_indices = all_idx[~in_held]

    def __len__(self) -> int:
        return len(self.episode_ids)

    def sample(self, idx: int) -> ExpertSample:
        return ExpertSample(
            observation=self.frames[idx].reshape(self.obs_shape).astype(np.float64),
            features=self.features[idx].copy(),
            mask=self.masks[idx].copy(),
            reward=float(self.rewards[idx]),
            terminal=bool(self.terminals[idx]))

    def stacked_obs(self, indices: np.ndarray, depth: int = STACK_DEPTH) -> np.ndarray:
        """Stacked float inputs for the given sample indices, oldest frame
        first; history never crosses an episode start."""
        indices = np.asarray(indices, dtype=np.int64)
        starts = self.episode_starts[self.episode_ids[indices]]
        cols = []
        for k in range(depth):
            src = indices - (depth - 1 - k)
            src = np.maximum(src, starts)
            cols.append(self.frames[src])
        return np.concatenate(cols, axis=1).astype(np.float64)

    def heldout_batch(self, depth: int = STACK_DEPTH
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.heldout_indices
        return (self.stacked_obs(idx, depth=depth),
                self.features[idx].copy(), self.masks[idx].copy())


def record_scripted(episodes: int, seed: int,
                    env_cfg: EnvConfig | None = None) -> DemoDataset:
    """Play the scripted oracle for ``episodes`` full episodes and record
    every step.  Episode seeds are seed, seed+1, ... for reproducibility."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    cfg = env_cfg if env_cfg is not None else EnvConfig()
    env = ArenaEnv(cfg)
    frames, feats, masks, rewards, terminals, ep_ids = [], [], [], [], [], []
    scores = []
    for e in range(episodes):
        _, frame = env.reset(seed + e)
        score = 0.0
        done = False
        while not done:
            mask = scripted_expert(env)
            obs = frame  # what the expert saw when acting
            _, frame, reward, done = env.step(mask)
            frames.append(obs.flat.astype(np.uint8))
            feats.append(obs.features)
            masks.append(mask)
            rewards.append(reward)
            terminals.append(done)
            ep_ids.append(e)
            score += reward
        scores.append(score)
    return DemoDataset(
        frames=np.array(frames, dtype=np.uint8),
        features=np.array(feats, dtype=np.float64),
        masks=np.array(masks, dtype=np.uint8),
        rewards=np.array(rewards, dtype=np.float64),
        terminals=np.array(terminals, dtype=bool),
        episode_ids=np.array(ep_ids, dtype=np.int64),
        scores=scores, source="scripted", seed=seed,
        env_config=env_config_dict(cfg), obs_shape=cfg.obs_shape)


# -- persistence ------------------------------------------------------------

def _encode_frame(bits: np.ndarray) -> str:
    packed = np.packbits(bits.astype(np.uint8))
    return base64.b64encode(packed.tobytes()).decode("ascii")


def _decode_frame(text: str, n_bits: int) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(text), dtype=np.uint8)
    return np.unpackbits(raw)[:n_bits]


def save(ds: DemoDataset, path) -> None:
    lines = []
    header = {"kind": FORMAT_KIND, "version": FORMAT_VERSION,
              "n_actions": ds.n_actions, "obs_shape": list(ds.obs_shape),
              "feature_dim": ds.feature_dim, "source": ds.source,
              "seed": ds.seed, "env": ds.env_config}
    lines.append(json.dumps(header))
    for e in range(ds.n_episodes):
        lines.append(json.dumps({"ep": e}))
        lo = ds.episode_starts[e]
        hi = ds.episode_starts[e + 1] if e + 1 < ds.n_episodes else len(ds)
        for i in range(lo, hi):
            rec = {"o": _encode_frame(ds.frames[i]),
                   "f": [float(x) for x in ds.features[i]],
                   "m": "".join(str(int(b)) for b in ds.masks[i]),
                   "r": float(ds.rewards[i]),
                   "t": int(ds.terminals[i])}
            lines.append(json.dumps(rec))
    body = "\n".join(lines) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    trailer = json.dumps({"end": True, "steps": len(ds),
                          "episodes": ds.n_episodes,
                          "scores": [float(s) for s in ds.scores],
                          "sha256": digest})
    with open(path, "w") as fh:
        fh.write(body)
        fh.write(trailer + "\n")


def load(path) -> DemoDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8", errors="replace")
    lines = text.splitlines()
    if not lines:
        raise DemoTruncatedError("empty demo file", 0)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise DemoTruncatedError("unreadable header line", 0) from None
    if header.get("kind") != FORMAT_KIND:
        raise DemoVersionError(f"not a demo file (kind={header.get('kind')!r})")
    if header.get("version") != FORMAT_VERSION:
        raise DemoVersionError(
            f"unsupported demo version {header.get('version')!r}, "
            f"expected {FORMAT_VERSION}")

    try:
        trailer = json.loads(lines[-1])
    except json.JSONDecodeError:
        trailer = None
    if not isinstance(trailer, dict) or not trailer.get("end"):
        raise DemoTruncatedError("missing end-of-file trailer", len(raw))
    body = "\n".join(lines[:-1]) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    if digest != trailer.get("sha256"):
        raise DemoChecksumError(
            f"checksum mismatch: file {trailer.get('sha256')!r}, computed {digest!r}")

    obs_shape = tuple(header["obs_shape"])
    n_bits = int(np.prod(obs_shape))
    frames, feats, masks, rewards, terminals, ep_ids = [], [], [], [], [], []
    episode = -1
    offset = len(lines[0].encode()) + 1
    for line in lines[1:-1]:
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            raise DemoTruncatedError("corrupt record", offset) from None
        if "ep" in rec:
            episode += 1
        else:
            if episode < 0:
                raise DemoTruncatedError("step record before any episode marker", offset)
            frames.append(_decode_frame(rec["o"], n_bits))
            feats.append(rec["f"])
            masks.append([int(ch) for ch in rec["m"]])
            rewards.append(rec["r"])
            terminals.append(bool(rec["t"]))
            ep_ids.append(episode)
        offset += len(line.encode()) + 1
    steps = len(frames)
    if steps != trailer.get("steps") or episode + 1 != trailer.get("episodes"):
        raise DemoTruncatedError(
            f"record count mismatch: trailer says {trailer.get('steps')} steps / "
            f"{trailer.get('episodes')} episodes, found {steps} / {episode + 1}",
            offset)
    return DemoDataset(
        frames=np.array(frames, dtype=np.uint8).reshape(steps, n_bits),
        features=np.array(feats, dtype=np.float64),
        masks=np.array(masks, dtype=np.uint8),
        rewards=np.array(rewards, dtype=np.float64),
        terminals=np.array(terminals, dtype=bool),
        episode_ids=np.array(ep_ids, dtype=np.int64),
        scores=[float(s) for s in trailer.get("scores", [])],
        source=header.get("source", "unknown"), seed=header.get("seed"),
        env_config=header.get("env", {}), obs_shape=obs_shape)


# -- training-side access ---------------------------------------------------

def sample_expert_batch(ds: DemoDataset, size: int, rng: np.random.Generator,
                        obs_std: float = OBS_NOISE_STD,
                        feat_std: float = FEATURE_NOISE_STD,
                        depth: int = STACK_DEPTH):
    """Uniform-with-replacement draw from the training split.

    Gaussian noise is applied to the stacked observation and the features,
    fresh per draw; masks are never perturbed and stored data is untouched.
    Returns (stacked_obs, features, masks) arrays of leading dim ``size``.
    """
    if len(ds.train_indices) == 0:
        raise ValueError("dataset has no training samples")
    if size > len(ds.train_indices):
        raise ValueError(
            f"batch size {size} exceeds training split ({len(ds.train_indices)})")
    picks = ds.train_indices[rng.integers(0, len(ds.train_indices), size=size)]
    obs = ds.stacked_obs(picks, depth=depth)
    feats = ds.features[picks].astype(np.float64, copy=True)
    if obs_std > 0:
        obs = obs + rng.normal(0.0, obs_std, size=obs.shape)
    if feat_std > 0:
        feats = feats + rng.normal(0.0, feat_std, size=feats.shape)
    return obs, feats, ds.masks[picks].copy()


def heldout_action_accuracy(ds: DemoDataset, policy, threshold: float = 0.5,
                            depth: int = STACK_DEPTH) -> float:
    """Fraction of held-out samples whose expert mask is reproduced exactly
    when each marginal is thresholded (>= threshold -> pressed).

    ``policy`` is either a callable (stacked_obs, features) -> probability
    array or an object exposing that via ``predict_probs``.
    """
    if len(ds.heldout_indices) == 0:
        raise ValueError("dataset has no held-out samples")
    obs, feats, masks = ds.heldout_batch(depth=depth)
    predict = policy.predict_probs if hasattr(policy, "predict_probs") else policy
    probs = np.asarray(predict(obs, feats))
    if probs.shape[1] > ds.n_actions:  # single-action head: drop the no-op slot
        probs = probs[:, :ds.n_actions]
    predicted = (probs >= threshold).astype(np.uint8)
    return float(np.mean(np.all(predicted == masks, axis=1)))


def concat_datasets(parts: list[DemoDataset]) -> DemoDataset:
    """Merge datasets (e.g. scripted + human) with episodes renumbered."""
    if not parts:
        raise ValueError("nothing to concatenate")
    base = parts[0]
    for p in parts[1:]:
        if p.obs_shape != base.obs_shape or p.n_actions != base.n_actions:
            raise ValueError("datasets have incompatible shapes")
    ep_ids = []
    ep_offset = 0
    for p in parts:
        ep_ids.append(p.episode_ids + ep_offset)
        ep_offset += p.n_episodes
    sources = sorted({p.source for p in parts})
    return DemoDataset(
        frames=np.concatenate([p.frames for p in parts]),
        features=np.concatenate([p.features for p in parts]),
        masks=np.concatenate([p.masks for p in parts]),
        rewards=np.concatenate([p.rewards for p in parts]),
        terminals=np.concatenate([p.terminals for p in parts]),
        episode_ids=np.concatenate(ep_ids),
        scores=[s for p in parts for s in p.scores],
        source="+".join(sources), seed=base.seed,
        env_config=base.env_config, obs_shape=base.obs_shape)
