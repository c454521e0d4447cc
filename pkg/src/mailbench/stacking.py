"""Frame stacking: concatenate the last few observation tensors so a
feedforward trunk can see short-term motion (projectiles, enemy headings).
"""

from __future__ import annotations

from collections import deque

import numpy as np

STACK_DEPTH = 4


class FrameStacker:
    """Sliding window over per-step observation tensors.

    The flattened output orders frames oldest first, so index 0 of the
    window is the stalest frame and the newest sits at the end.  On reset
    the window is filled with copies of the initial frame.
    """

    def __init__(self, depth: int = STACK_DEPTH):
        if depth < 1:
            raise ValueError("stack depth must be >= 1")
        self.depth = depth
        self._frames: deque[np.ndarray] = deque(maxlen=depth)

    def reset(self, frame: np.ndarray) -> np.ndarray:
        self._frames.clear()
        flat = np.asarray(frame, dtype=np.float64).ravel()
        for _ in range(self.depth):
            self._frames.append(flat)
        return self.stacked()

    def push(self, frame: np.ndarray) -> np.ndarray:
        if not self._frames:
            raise ValueError("stacker not initialized; call reset first")
        self._frames.append(np.asarray(frame, dtype=np.float64).ravel())
        return self.stacked()

    def stacked(self) -> np.ndarray:
        return np.concatenate(list(self._frames))


def stack_from_history(frames: list[np.ndarray], t: int, episode_start: int,
                       depth: int = STACK_DEPTH) -> np.ndarray:
    """Rebuild the stacked input for step ``t`` from stored single frames.

    Replicates FrameStacker exactly: indices before ``episode_start`` clamp
    to the episode's first frame.  Lets datasets store one frame per step
    instead of ``depth`` overlapping copies.
    """
    if not episode_start <= t < len(frames):
        raise ValueError(f"step {t} outside [{episode_start}, {len(frames)})")
    parts = []
    for k in range(depth):
        idx = t - (depth - 1 - k)
        if idx < episode_start:
            idx = episode_start
        parts.append(np.asarray(frames[idx], dtype=np.float64).ravel())
    return np.concatenate(parts)
