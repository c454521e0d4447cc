#!/usr/bin/env python3
"""Regenerate the committed arena regression trace.

The trace pins exact rewards and state digests for a fixed action script:
one long oracle-driven episode (covers waves, relocation, projectiles) and
one short random-mask episode that ends in agent death.  Masks are stored
literally, so replaying never depends on how the masks were produced.

Run from the repository root:

    python tools/make_golden_trace.py
"""

import json
import pathlib

import numpy as np

from mailbench.arena import (ArenaEnv, EnvConfig, env_config_dict,
                             scripted_expert, state_hash)

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data" / "golden_trace_seed42.jsonl"

EXPERT_SEED = 42
EXPERT_STEPS = 260
RANDOM_SEED = 43
MASK_RNG_SEED = 1234


def emit_episode(env, seed, mask_fn, max_steps, lines):
    state, _ = env.reset(seed)
    lines.append({"reset": seed, "hash": state_hash(state)})
    for t in range(max_steps):
        mask = mask_fn(env)
        state, _, reward, done = env.step(mask)
        lines.append({"t": t, "mask": "".join(str(int(b)) for b in mask),
                      "reward": reward, "hash": state_hash(state)})
        if done:
            break


def main():
    cfg = EnvConfig()
    env = ArenaEnv(cfg)
    lines = [{"kind": "arena-trace", "version": 1, "config": env_config_dict(cfg)}]
    emit_episode(env, EXPERT_SEED, lambda e: scripted_expert(e), EXPERT_STEPS, lines)
    mask_rng = np.random.default_rng(MASK_RNG_SEED)
    emit_episode(env, RANDOM_SEED,
                 lambda e: (mask_rng.random(e.cfg.n_actions) < 0.35).astype(np.uint8),
                 200, lines)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with OUT.open("w") as fh:
        for line in lines:
            fh.write(json.dumps(line) + "\n")
    print(f"wrote {OUT} ({len(lines)} lines)")


if __name__ == "__main__":
    main()
