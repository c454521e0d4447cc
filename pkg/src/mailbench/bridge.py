"""Websocket bridge: play the arena from a browser, record demonstrations.

One client at a time drives one arena session.  The server owns the clock:
every tick it applies the most recently received key-state mask, steps the
environment, appends the (observation, mask, reward) sample to the episode
buffer, and pushes a render-friendly state frame.  Completed episodes are
written in the demonstration dataset format, so human sessions train
through exactly the same loader as scripted ones.

Every websocket message is one JSON object with a "type" field:

  server -> client
    hello   once after connect: static arena geometry + protocol info
    state   one per tick: entities, HUD values, episode status
    saved   acknowledges a save control
    error   {"message", "fatal"}; fatal errors close the connection
  client -> server
    input   {"mask": [0/1] * n_actions}  latest mask wins
    control {"op": "start" | "pause" | "reset" | "save"}

Unknown fields are ignored for forward compatibility; unknown types,
non-JSON payloads, or a bad mask are fatal protocol errors.

Episode seeds follow the scripted-recorder convention: the k-th kept
episode of a session runs on seed_base + k, so a saved file replays
deterministically from its header seed alone.
"""
from __future__ import annotations

import json
import threading
import time

import numpy as np
from websockets.exceptions import ConnectionClosed
from websockets.sync.server import Server, ServerConnection, serve as ws_serve

from .arena import ACTION_NAMES, ArenaEnv, EnvConfig, OBS_CHANNELS, env_config_dict
from .expert_data import DemoDataset, save as save_demos

PROTOCOL_VERSION = 1
DEFAULT_TICK_HZ = 15.0


def env_config_from_dict(d: dict) -> EnvConfig:
    d = dict(d)
    if "wall_blocks" in d:
        d["wall_blocks"] = tuple(tuple(b) for b in d["wall_blocks"])
    return EnvConfig(**d)


class ProtocolError(Exception):
    pass


def _parse_frame(raw) -> dict:
    if isinstance(raw, bytes):
        raise ProtocolError("binary frames are not part of the protocol")
    try:
        frame = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc}") from exc
    if not isinstance(frame, dict) or "type" not in frame:
        raise ProtocolError("frame must be an object with a 'type' field")
    return frame


def decode_input_mask(frame: dict, n_actions: int) -> np.ndarray:
    mask = frame.get("mask")
    if (not isinstance(mask, list) or len(mask) != n_actions
            or any(b not in (0, 1) for b in mask)):
        raise ProtocolError(
            f"input mask must be a list of {n_actions} bits")
    return np.array(mask, dtype=np.uint8)


class DemoBridge:
    """Session state plus the per-connection tick loop.

    The environment and all buffers are confined to the handler thread of
    the active connection; only the active-client flag is shared.
    """

    CONTROL_OPS = ("start", "pause", "reset", "save")

    def __init__(self, env_cfg: EnvConfig | None = None,
                 out_path: str = "demos/human.jsonl",
                 tick_hz: float = DEFAULT_TICK_HZ, seed: int = 0,
                 keep_partial: bool = False):
        if tick_hz <= 0:
            raise ValueError("tick_hz must be positive")
        self.env_cfg = env_cfg if env_cfg is not None else EnvConfig()
        self.out_path = out_path
        self.tick_hz = float(tick_hz)
        self.seed_base = int(seed)
        self.keep_partial = keep_partial

        self._busy = threading.Lock()
        # Kept episodes survive reconnects so one file can span sessions.
        self.episodes: list[list[tuple]] = []
        self.scores: list[float] = []

    # -- dataset assembly ---------------------------------------------------

    def _flush(self) -> tuple[str, int, int]:
        if not self.episodes:
            raise ProtocolError("nothing recorded yet; no episodes to save")
        frames, feats, masks, rewards, terminals, ep_ids = [], [], [], [], [], []
        for e, samples in enumerate(self.episodes):
            for (obs, fe, mask, reward, terminal) in samples:
                frames.append(obs)
                feats.append(fe)
                masks.append(mask)
                rewards.append(reward)
                terminals.append(terminal)
                ep_ids.append(e)
        ds = DemoDataset(
            frames=np.array(frames, dtype=np.uint8),
            features=np.array(feats, dtype=np.float64),
            masks=np.array(masks, dtype=np.uint8),
            rewards=np.array(rewards, dtype=np.float64),
            terminals=np.array(terminals, dtype=bool),
            episode_ids=np.array(ep_ids, dtype=np.int64),
            scores=list(self.scores), source="human", seed=self.seed_base,
            env_config=env_config_dict(self.env_cfg),
            obs_shape=self.env_cfg.obs_shape)
        save_demos(ds, self.out_path)
        return self.out_path, len(self.episodes), len(ep_ids)

    # -- frames -------------------------------------------------------------

    def _hello_frame(self, env: ArenaEnv) -> dict:
        walls = [[int(x), int(y)] for x, y in zip(*np.nonzero(env.walls))]
        return {
            "type": "hello", "protocol": PROTOCOL_VERSION,
            "n_actions": self.env_cfg.n_actions,
            "actions": list(ACTION_NAMES),
            "channels": list(OBS_CHANNELS),
            "grid": {"width": self.env_cfg.width,
                     "height": self.env_cfg.height, "walls": walls},
            "view_size": self.env_cfg.view_size,
            "tick_hz": self.tick_hz,
            "seed": self.seed_base,
        }

    def _state_frame(self, env: ArenaEnv, tick: int, status: str,
                     episode: int, score: float, reward: float,
                     mask: np.ndarray, view: dict | None) -> dict:
        frame = {
            "type": "state", "tick": tick, "status": status,
            "episode": episode, "score": round(score, 6),
            "reward": round(reward, 6), "mask": [int(b) for b in mask],
        }
        state = env.state
        if state is not None:
            frame.update({
                "step": state.step,
                "health": state.health, "ammo": state.ammo,
                "agent": {"x": state.agent_x, "y": state.agent_y,
                          "facing": state.facing},
                "enemies": [{"x": e.x, "y": e.y} for e in state.enemies],
                "pickups": [{"x": p.x, "y": p.y, "kind": p.kind}
                            for p in state.pickups],
                "projectiles": [{"x": p.x, "y": p.y, "dx": p.dx, "dy": p.dy}
                                for p in state.projectiles],
                "roi": {"x": state.roi_x, "y": state.roi_y,
                        "radius": self.env_cfg.roi_radius},
            })
            if view is not None:
                frame["view"] = view
        return frame

    @staticmethod
    def _view_summary(tensor: np.ndarray) -> dict:
        # active cells per channel; the ego window is sparse
        out = {}
        for ch, name in enumerate(OBS_CHANNELS):
            rows, cols = np.nonzero(tensor[ch])
            out[name] = [[int(r), int(c)] for r, c in zip(rows, cols)]
        return out

    # -- session loop -------------------------------------------------------

    def handler(self, ws: ServerConnection) -> None:
        if not self._busy.acquire(blocking=False):
            ws.send(json.dumps({"type": "error", "fatal": True,
                                "message": "another client is connected"}))
            ws.close(1013, "busy")
            return
        try:
            self._session(ws)
        except ConnectionClosed:
            pass
        finally:
            self._busy.release()

    def _session(self, ws: ServerConnection) -> None:
        env = ArenaEnv(self.env_cfg)
        ws.send(json.dumps(self._hello_frame(env)))

        status = "idle"
        tick = 0
        mask = np.zeros(self.env_cfg.n_actions, dtype=np.uint8)
        current: list[tuple] = []
        obs = None
        score = 0.0
        last_reward = 0.0
        interval = 1.0 / self.tick_hz
        deadline = time.monotonic() + interval

        def start_episode():
            nonlocal status, current, obs, score, last_reward
            _, obs = env.reset(self.seed_base + len(self.episodes))
            current = []
            score = 0.0
            last_reward = 0.0
            status = "running"

        def drop_current(partial_ok: bool):
            """Keep or discard an unfinished episode buffer."""
            nonlocal current
            if current and partial_ok:
                self.episodes.append(current)
                self.scores.append(score)
            current = []

        try:
            while True:
                # 1. drain every pending client frame
                while True:
                    try:
                        raw = ws.recv(timeout=0)
                    except TimeoutError:
                        break
                    frame = _parse_frame(raw)
                    if frame["type"] == "input":
                        mask = decode_input_mask(frame, self.env_cfg.n_actions)
                    elif frame["type"] == "control":
                        op = frame.get("op")
                        if op not in self.CONTROL_OPS:
                            raise ProtocolError(f"unknown control op {op!r}")
                        if op == "start":
                            if status == "paused":
                                status = "running"
                            elif status in ("idle", "ended"):
                                start_episode()
                        elif op == "pause":
                            if status == "running":
                                status = "paused"
                        elif op == "reset":
                            if status in ("running", "paused"):
                                drop_current(self.keep_partial)
                            start_episode()
                        elif op == "save":
                            try:
                                path, n_eps, n_steps = self._flush()
                                ws.send(json.dumps(
                                    {"type": "saved", "path": str(path),
                                     "episodes": n_eps, "steps": n_steps}))
                            except ProtocolError as exc:
                                ws.send(json.dumps(
                                    {"type": "error", "fatal": False,
                                     "message": str(exc)}))
                    else:
                        raise ProtocolError(
                            f"unknown frame type {frame['type']!r}")

                # 2. advance the arena by one tick while running
                view = None
                if status == "running":
                    seen = obs
                    _, obs, reward, done = env.step(mask)
                    current.append((seen.flat.astype(np.uint8),
                                    seen.features.copy(), mask.copy(),
                                    float(reward), bool(done)))
                    score += reward
                    last_reward = reward
                    tick += 1
                    view = self._view_summary(obs.tensor)
                    if done:
                        self.episodes.append(current)
                        self.scores.append(score)
                        current = []
                        status = "ended"
                elif obs is not None:
                    view = self._view_summary(obs.tensor)

                ws.send(json.dumps(self._state_frame(
                    env, tick, status, len(self.episodes), score,
                    last_reward, mask, view)))

                # 3. fixed-rate schedule, drift-free
                now = time.monotonic()
                if deadline > now:
                    time.sleep(deadline - now)
                    deadline += interval
                else:
                    deadline = now + interval
        except ProtocolError as exc:
            try:
                ws.send(json.dumps({"type": "error", "fatal": True,
                                    "message": str(exc)}))
            except ConnectionClosed:
                pass
            ws.close(1002, "protocol error")
            drop_current(self.keep_partial)
        except ConnectionClosed:
            drop_current(self.keep_partial)
            if self.episodes:
                # don't lose finished work when the tab goes away
                self._flush()
            raise


def make_server(bridge: DemoBridge, host: str = "127.0.0.1",
                port: int = 0) -> Server:
    """Bind a websocket server for the bridge; port 0 picks a free port."""
    return ws_serve(bridge.handler, host, port)


def serve(port: int = 8765, env_cfg: EnvConfig | None = None,
          out_path: str = "demos/human.jsonl",
          tick_hz: float = DEFAULT_TICK_HZ, seed: int = 0,
          keep_partial: bool = False) -> None:
    """Blocking entry point used by the serve-demo CLI subcommand."""
    bridge = DemoBridge(env_cfg, out_path, tick_hz, seed, keep_partial)
    with make_server(bridge, port=port) as server:
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


def replay_episode(ds: DemoDataset, episode: int) -> list[float]:
    """Re-run a recorded episode's masks from its seed; returns the reward
    sequence (bitwise identical to the recording when dynamics match)."""
    if ds.seed is None:
        raise ValueError("dataset has no seed; cannot replay")
    env = ArenaEnv(env_config_from_dict(ds.env_config))
    env.reset(ds.seed + episode)
    idx = np.nonzero(ds.episode_ids == episode)[0]
    if len(idx) == 0:
        raise ValueError(f"no such episode {episode}")
    rewards = []
    for i in idx:
        _, _, reward, done = env.step(ds.masks[i])
        rewards.append(float(reward))
        if done:
            break
    return rewards
