"""Seedable zone-capture grid arena with concurrent primitive actions.

A single agent moves on a walled W x H grid.  Enemies spawn in waves and
home toward the agent, attacking when adjacent.  Health and ammo boxes plus
a region-of-interest (ROI) relocate to random free cells at a fixed period.
Rewards: eliminating an enemy, collecting a box, each step spent inside the
ROI, and a penalty on death.

The seven primitive actions are applied concurrently from a binary mask;
any subset (including none) is legal.  Within one step the order is fixed:

    1. turns (turn_left/turn_right; both together cancel)
    2. movement (vector sum of selected moves, per-axis clamped to one
       cell; contradictory moves cancel; blocked moves are dropped whole)
    3. fire (spawns a projectile one cell ahead if ammo remains; the spawn
       cell itself is hit-checked)
    4. pre-existing projectiles advance two cells with per-cell hit checks
    5. enemies move toward the agent on even step counts, then every
       adjacent enemy attacks
    6. box pickup at the agent's cell
    7. ROI occupancy reward
    8. step counter increments; waves spawn and boxes/ROI relocate when the
       new count is an exact multiple of the respective interval
    9. termination check (health exhausted or horizon reached)

Everything stochastic draws from the episode generator seeded at reset, so
(seed, action sequence) fully determines a trajectory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

ACTION_NAMES = ("forward", "back", "strafe_left", "strafe_right",
                "turn_left", "turn_right", "fire")
A_FORWARD, A_BACK, A_STRAFE_L, A_STRAFE_R, A_TURN_L, A_TURN_R, A_FIRE = range(7)

# Facing 0..7 = N, NE, E, SE, S, SW, W, NW; x grows east, y grows south.
DIRS8 = ((0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1))

OBS_CHANNELS = ("walls", "enemies", "pickups_health", "pickups_ammo", "roi", "projectiles")


@dataclass
class EnvConfig:
    width: int = 24
    height: int = 24
    view_size: int = 11
    horizon: int = 1000
    relocate_interval: int = 150
    wave_interval: int = 120
    wave_size: int = 3
    max_enemies: int = 12
    max_health: float = 100.0
    max_ammo: int = 20
    enemy_damage: float = 2.0
    enemy_move_period: int = 2
    enemy_spawn_distance: int = 8
    projectile_speed: int = 2
    health_pack: float = 25.0
    ammo_pack: int = 10
    boxes_per_kind: int = 2
    roi_radius: float = 2.0
    reward_kill: float = 1.0
    reward_pickup: float = 0.5
    reward_roi: float = 0.02
    reward_death: float = -1.0
    # Interior wall rectangles as (x, y, w, h); the border is always walled.
    wall_blocks: tuple[tuple[int, int, int, int], ...] = (
        (5, 5, 3, 3), (16, 14, 3, 3), (10, 17, 4, 2))

    def __post_init__(self):
        if self.view_size % 2 != 1:
            raise ValueError("view_size must be odd")
        for name in ("width", "height", "horizon", "relocate_interval", "wave_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_actions(self) -> int:
        return len(ACTION_NAMES)

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return (len(OBS_CHANNELS), self.view_size, self.view_size)


@dataclass
class Enemy:
    x: int
    y: int
    health: int
    wave_id: int


@dataclass
class Pickup:
    x: int
    y: int
    kind: str  # "health" | "ammo"


@dataclass
class Projectile:
    x: int
    y: int
    dx: int
    dy: int


@dataclass
class WorldState:
    step: int
    agent_x: int
    agent_y: int
    facing: int
    health: float
    ammo: int
    enemies: list[Enemy]
    pickups: list[Pickup]
    projectiles: list[Projectile]
    roi_x: int
    roi_y: int
    rng: np.random.Generator
    done: bool = False
    episode_seed: int | None = None
    next_wave_id: int = 0


def _canonical_state(state: WorldState) -> str:
    rng_state = state.rng.bit_generator.state
    payload = {
        "step": state.step,
        "agent": [state.agent_x, state.agent_y, state.facing],
        "health": round(state.health, 9),
        "ammo": state.ammo,
        "enemies": [[e.x, e.y, e.health, e.wave_id] for e in state.enemies],
        "pickups": [[p.x, p.y, p.kind] for p in state.pickups],
        "projectiles": [[p.x, p.y, p.dx, p.dy] for p in state.projectiles],
        "roi": [state.roi_x, state.roi_y],
        "done": state.done,
        "rng": json.dumps(rng_state, sort_keys=True, default=str),
    }
    return json.dumps(payload, sort_keys=True)


def state_hash(state: WorldState) -> str:
    return hashlib.sha256(_canonical_state(state).encode()).hexdigest()


class ArenaEnv:
    """One arena instance; single-threaded, owned by one actor."""

    def __init__(self, cfg: EnvConfig | None = None):
        self.cfg = cfg if cfg is not None else EnvConfig()
        c = self.cfg
        self.walls = np.zeros((c.width, c.height), dtype=bool)
        self.walls[0, :] = self.walls[-1, :] = True
        self.walls[:, 0] = self.walls[:, -1] = True
        for (bx, by, bw, bh) in c.wall_blocks:
            self.walls[bx:bx + bw, by:by + bh] = True
        self.state: WorldState | None = None
        self._pad = c.view_size - 3  # covers rotated window offsets
        self._channels = np.zeros(
            (len(OBS_CHANNELS), c.width + 2 * self._pad, c.height + 2 * self._pad))
        walls_ch = np.ones_like(self._channels[0])
        walls_ch[self._pad:self._pad + c.width, self._pad:self._pad + c.height] = self.walls
        self._walls_padded = walls_ch
        self._view_offsets = self._build_view_offsets()
        self._roi_offsets = [(dx, dy)
                             for dx in range(-int(c.roi_radius), int(c.roi_radius) + 1)
                             for dy in range(-int(c.roi_radius), int(c.roi_radius) + 1)
                             if dx * dx + dy * dy <= c.roi_radius ** 2]

    def _build_view_offsets(self):
        """For each facing: world-cell offsets sampled by the egocentric
        window (row 0 furthest ahead), via rotation and rounding."""
        k = self.cfg.view_size
        c = k // 2
        offsets = []
        for facing in range(8):
            fx, fy = DIRS8[facing]
            norm = np.hypot(fx, fy)
            fnx, fny = fx / norm, fy / norm
            rx, ry = DIRS8[(facing + 2) % 8]
            norm_r = np.hypot(rx, ry)
            rnx, rny = rx / norm_r, ry / norm_r
            ox = np.empty((k, k), dtype=np.int64)
            oy = np.empty((k, k), dtype=np.int64)
            for i in range(k):
                ahead = c - i
                for j in range(k):
                    right = j - c
                    ox[i, j] = int(np.floor(ahead * fnx + right * rnx + 0.5))
                    oy[i, j] = int(np.floor(ahead * fny + right * rny + 0.5))
            offsets.append((ox.ravel(), oy.ravel()))
        return offsets

    # -- helpers ------------------------------------------------------------

    def _is_wall(self, x: int, y: int) -> bool:
        c = self.cfg
        if not (0 <= x < c.width and 0 <= y < c.height):
            return True
        return bool(self.walls[x, y])

    def _free_cell(self, rng: np.random.Generator, state: WorldState | None,
                   min_agent_dist: int = 0, margin: int = 1) -> tuple[int, int]:
        c = self.cfg
        while True:
            x = int(rng.integers(margin, c.width - margin))
            y = int(rng.integers(margin, c.height - margin))
            if self.walls[x, y]:
                continue
            if state is not None:
                if max(abs(x - state.agent_x), abs(y - state.agent_y)) < min_agent_dist:
                    continue
                if any(e.x == x and e.y == y for e in state.enemies):
                    continue
                if any(p.x == x and p.y == y for p in state.pickups):
                    continue
            return x, y

    def _spawn_wave(self, state: WorldState) -> None:
        c = self.cfg
        n = min(c.wave_size, c.max_enemies - len(state.enemies))
        wave = state.next_wave_id
        state.next_wave_id += 1
        for _ in range(n):
            x, y = self._free_cell(state.rng, state, min_agent_dist=c.enemy_spawn_distance)
            state.enemies.append(Enemy(x, y, health=1, wave_id=wave))

    def _relocate(self, state: WorldState) -> None:
        c = self.cfg
        state.pickups = []
        for kind in ("health", "ammo"):
            for _ in range(c.boxes_per_kind):
                x, y = self._free_cell(state.rng, state, min_agent_dist=2)
                state.pickups.append(Pickup(x, y, kind))
        rx, ry = self._free_cell(state.rng, state, margin=3)
        state.roi_x, state.roi_y = rx, ry

    # -- episode protocol ---------------------------------------------------

    def reset(self, seed: int) -> tuple[WorldState, "ObservationFrame"]:
        c = self.cfg
        rng = np.random.default_rng(seed)
        state = WorldState(
            step=0,
            agent_x=c.width // 2, agent_y=c.height // 2, facing=0,
            health=float(c.max_health), ammo=c.max_ammo // 2,
            enemies=[], pickups=[], projectiles=[],
            roi_x=c.width // 2, roi_y=c.height // 2,
            rng=rng, episode_seed=seed)
        if self.walls[state.agent_x, state.agent_y]:
            raise ValueError("wall layout blocks the start cell")
        self._relocate(state)
        self._spawn_wave(state)
        self.state = state
        return state, self.observe()

    def step(self, mask) -> tuple[WorldState, "ObservationFrame", float, bool]:
        state = self.state
        if state is None or state.done:
            raise ValueError("environment needs reset before stepping")
        mask = np.asarray(mask).ravel()
        if mask.shape[0] != self.cfg.n_actions:
            raise ValueError(
                f"action mask length {mask.shape[0]}, expected {self.cfg.n_actions}")
        c = self.cfg
        reward = 0.0

        # 1. turns
        dturn = int(mask[A_TURN_R]) - int(mask[A_TURN_L])
        state.facing = (state.facing + dturn) % 8

        # 2. movement
        fx, fy = DIRS8[state.facing]
        lx, ly = DIRS8[(state.facing - 2) % 8]
        dx = dy = 0
        if mask[A_FORWARD]:
            dx += fx
            dy += fy
        if mask[A_BACK]:
            dx -= fx
            dy -= fy
        if mask[A_STRAFE_L]:
            dx += lx
            dy += ly
        if mask[A_STRAFE_R]:
            dx -= lx
            dy -= ly
        dx = max(-1, min(1, dx))
        dy = max(-1, min(1, dy))
        if (dx or dy) and not self._is_wall(state.agent_x + dx, state.agent_y + dy):
            state.agent_x += dx
            state.agent_y += dy

        # 3. fire
        if mask[A_FIRE] and state.ammo >= 1:
            state.ammo -= 1
            px, py = state.agent_x + fx, state.agent_y + fy
            reward += self._projectile_enter(state, px, py, fx, fy, spawn=True)

        # 4. pre-existing projectiles advance
        survivors = []
        for proj in state.projectiles:
            alive = True
            for _ in range(c.projectile_speed):
                proj.x += proj.dx
                proj.y += proj.dy
                r, alive = self._projectile_hit(state, proj.x, proj.y)
                reward += r
                if not alive:
                    break
            if alive:
                survivors.append(proj)
        state.projectiles = survivors

        # 5. enemies move (every enemy_move_period steps) then attack
        if state.step % c.enemy_move_period == 0:
            occupied = {(e.x, e.y) for e in state.enemies}
            for enemy in state.enemies:
                best = None
                best_key = None
                for di, (ex, ey) in enumerate(DIRS8 + ((0, 0),)):
                    nx, ny = enemy.x + ex, enemy.y + ey
                    if (ex or ey):
                        if self._is_wall(nx, ny) or (nx, ny) in occupied:
                            continue
                        if nx == state.agent_x and ny == state.agent_y:
                            continue
                    d2 = (nx - state.agent_x) ** 2 + (ny - state.agent_y) ** 2
                    key = (d2, di)
                    if best_key is None or key < best_key:
                        best_key = key
                        best = (nx, ny)
                if best is not None:
                    occupied.discard((enemy.x, enemy.y))
                    enemy.x, enemy.y = best
                    occupied.add(best)
        for enemy in state.enemies:
            if max(abs(enemy.x - state.agent_x), abs(enemy.y - state.agent_y)) <= 1:
                state.health -= c.enemy_damage

        # 6. box pickup
        remaining = []
        for p in state.pickups:
            if p.x == state.agent_x and p.y == state.agent_y:
                reward += c.reward_pickup
                if p.kind == "health":
                    state.health = min(c.max_health, state.health + c.health_pack)
                else:
                    state.ammo = min(c.max_ammo, state.ammo + c.ammo_pack)
            else:
                remaining.append(p)
        state.pickups = remaining

        # 7. ROI occupancy
        ddx = state.agent_x - state.roi_x
        ddy = state.agent_y - state.roi_y
        if ddx * ddx + ddy * ddy <= c.roi_radius ** 2:
            reward += c.reward_roi

        # 8. clock, waves, relocation
        state.step += 1
        if state.step % c.wave_interval == 0:
            self._spawn_wave(state)
        if state.step % c.relocate_interval == 0:
            self._relocate(state)

        # 9. termination
        done = False
        if state.health <= 0:
            state.health = 0.0
            reward += c.reward_death
            done = True
        elif state.step >= c.horizon:
            done = True
        state.done = done
        return state, self.observe(), reward, done

    def _projectile_enter(self, state: WorldState, px: int, py: int,
                          dx: int, dy: int, spawn: bool) -> float:
        reward, alive = self._projectile_hit(state, px, py)
        if alive and spawn:
            state.projectiles.append(Projectile(px, py, dx, dy))
        return reward

    def _projectile_hit(self, state: WorldState, px: int, py: int) -> tuple[float, bool]:
        """Resolve a projectile entering (px, py): returns (reward, still alive)."""
        if self._is_wall(px, py):
            return 0.0, False
        for enemy in state.enemies:
            if enemy.x == px and enemy.y == py:
                enemy.health -= 1
                if enemy.health <= 0:
                    state.enemies.remove(enemy)
                    return self.cfg.reward_kill, False
                return 0.0, False
        return 0.0, True

    # -- observation --------------------------------------------------------

    def observe(self) -> "ObservationFrame":
        """Egocentric occupancy window plus normalized game features.

        Pure function of the current state: the window is rotated so the
        agent's facing points up (row 0 is furthest ahead); out-of-grid
        cells read as walls.
        """
        state = self.state
        c = self.cfg
        p = self._pad
        ch = self._channels
        ch[0] = self._walls_padded
        ch[1:] = 0.0
        for e in state.enemies:
            ch[1, e.x + p, e.y + p] = 1.0
        for box in state.pickups:
            idx = 2 if box.kind == "health" else 3
            ch[idx, box.x + p, box.y + p] = 1.0
        for (dx, dy) in self._roi_offsets:
            ch[4, state.roi_x + dx + p, state.roi_y + dy + p] = 1.0
        for proj in state.projectiles:
            if 0 <= proj.x < c.width and 0 <= proj.y < c.height:
                ch[5, proj.x + p, proj.y + p] = 1.0
        ox, oy = self._view_offsets[state.facing]
        xs = state.agent_x + p + ox
        ys = state.agent_y + p + oy
        tensor = ch[:, xs, ys].reshape(len(OBS_CHANNELS), c.view_size, c.view_size).copy()
        self._paint_beacons(state, tensor)
        features = np.array([state.health / c.max_health, state.ammo / c.max_ammo])
        return ObservationFrame(tensor=tensor, features=features)

    def _paint_beacons(self, state: WorldState, tensor: np.ndarray) -> None:
        """Mark out-of-view objectives on the window border.

        Boxes and the ROI center that fall outside the egocentric window
        are projected onto the border cell in their direction, a minimap
        hint that keeps navigation targets inferable from the observation
        alone.  In-view entities are left to their own cells.
        """
        c = self.cfg.view_size // 2
        fx, fy = DIRS8[state.facing]
        norm = np.hypot(fx, fy)
        fnx, fny = fx / norm, fy / norm
        rx, ry = DIRS8[(state.facing + 2) % 8]
        norm_r = np.hypot(rx, ry)
        rnx, rny = rx / norm_r, ry / norm_r
        targets = []
        for kind, ch_idx in (("health", 2), ("ammo", 3)):
            boxes = [p for p in state.pickups if p.kind == kind]
            if boxes:
                # only the nearest of each kind gets a beacon, so the hint
                # is unambiguous about which box the direction points to
                best = min(boxes, key=lambda p: ((p.x - state.agent_x) ** 2
                                                 + (p.y - state.agent_y) ** 2))
                targets.append((ch_idx, best.x, best.y))
        targets.append((4, state.roi_x, state.roi_y))
        for ch_idx, tx, ty in targets:
            dx, dy = tx - state.agent_x, ty - state.agent_y
            ahead = dx * fnx + dy * fny
            right = dx * rnx + dy * rny
            m = max(abs(ahead), abs(right))
            if m <= c:  # inside the window; real cells cover it
                continue
            scale = c / m
            i = int(np.floor(c - ahead * scale + 0.5))
            j = int(np.floor(c + right * scale + 0.5))
            tensor[ch_idx, min(max(i, 0), 2 * c), min(max(j, 0), 2 * c)] = 1.0


@dataclass
class ObservationFrame:
    tensor: np.ndarray   # (channels, view, view), entries in {0, 1}
    features: np.ndarray  # [health, ammo], normalized to [0, 1]

    @property
    def flat(self) -> np.ndarray:
        return self.tensor.ravel()


# -- scripted oracle --------------------------------------------------------

LOW_HEALTH_FRAC = 0.55
LOW_AMMO_FRAC = 0.5
FIRE_RANGE = 3

# Ego-frame unit steps, octants clockwise from straight ahead, as
# (row, col) deltas in the view tensor (row 0 is furthest ahead).
EGO_DIRS = ((-1, 0), (-1, 1), (0, 1), (1, 1),
            (1, 0), (1, -1), (0, -1), (-1, -1))


def _octant_toward(dx: float, dy: float) -> int:
    """Nearest of the 8 facings for a nonzero direction vector."""
    angle = np.arctan2(dx, -dy)  # 0 at north, clockwise positive
    return int(np.floor(angle / (np.pi / 4) + 0.5)) % 8


def _ego_turn(ahead: float, right: float) -> tuple[int, int]:
    """(signed octant error, one-step turn) toward an ego-frame offset;
    ties at 180 degrees resolve to a right turn."""
    if ahead == 0 and right == 0:
        return 0, 0
    diff = _octant_toward(right, -ahead)
    if diff == 0:
        return 0, 0
    if diff <= 4:
        return diff, 1
    return diff - 8, -1


def expert_action_from_view(frame: "ObservationFrame", cfg: EnvConfig) -> np.ndarray:
    """Demonstrator policy computed from the egocentric window and the
    HUD features alone - the exact inputs a cloned policy receives - so
    its decisions are always inferable from a single observation.

    Behaviors, first match wins: combat (rotate onto the nearest visible
    threat, fire when the post-turn ray reaches it, back off from
    adjacent ones; with dry ammo just back off), emergency restock when a
    feature runs low (travel to the health/ammo channel, which marks
    off-screen boxes as border beacons), strafe-orbit while inside the
    capture zone, and travel toward the zone.
    """
    t = frame.tensor
    walls = t[0]
    center = cfg.view_size // 2
    mask = np.zeros(cfg.n_actions, dtype=np.uint8)

    def active(channel: int) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(t[channel])
        return [(int(r) - center, int(c) - center)  # (ahead*-1, right) raw
                for r, c in zip(rows, cols)]

    def ego(cell: tuple[int, int]) -> tuple[int, int]:
        return -cell[0], cell[1]  # (ahead, right)

    def choose_key(cell: tuple[int, int]) -> tuple:
        a, r = ego(cell)
        err, _ = _ego_turn(a, r)
        return (a * a + r * r, abs(err), 0 if err >= 0 else 1)

    def is_wall(ahead: int, right: int) -> bool:
        r, c = center - ahead, center + right
        if not (0 <= r < cfg.view_size and 0 <= c < cfg.view_size):
            return True  # beyond the window, treat as blocked
        return walls[r, c] > 0

    def in_channel(channel: int, ahead: int, right: int) -> bool:
        r, c = center - ahead, center + right
        if not (0 <= r < cfg.view_size and 0 <= c < cfg.view_size):
            return False
        return t[channel][r, c] > 0

    def set_turn(turn: int) -> None:
        if turn > 0:
            mask[A_TURN_R] = 1
        elif turn < 0:
            mask[A_TURN_L] = 1

    def travel_to(goal: tuple[int, int]) -> None:
        # Walk forward while the goal sits within one octant of straight
        # ahead, turn toward it when it drifts further, and sidestep when
        # a wall blocks the line.
        a, r = ego(goal)
        err, turn = _ego_turn(a, r)
        if abs(err) >= 2:
            set_turn(turn)
        elif not is_wall(1, 0):
            mask[A_FORWARD] = 1
        elif not is_wall(0, -1):
            mask[A_STRAFE_L] = 1
        elif not is_wall(0, 1):
            mask[A_STRAFE_R] = 1

    enemies = active(1)
    if enemies and frame.features[1] > 0:
        # Combat: the whole window is inside firing range.
        nearest = min(enemies, key=choose_key)
        a, r = ego(nearest)
        err, turn = _ego_turn(a, r)
        set_turn(turn)
        # Fire when the post-turn ray meets an enemy before any wall.
        da, dr = EGO_DIRS[turn % 8]
        ra, rr = 0, 0
        for _ in range(FIRE_RANGE):
            ra -= da
            rr += dr
            if is_wall(ra, rr):
                break
            if in_channel(1, ra, rr):
                mask[A_FIRE] = 1
                break
        if max(abs(a), abs(r)) <= 2:
            ba, br = EGO_DIRS[(turn + 4) % 8]
            if not is_wall(-ba, br):
                mask[A_BACK] = 1
        return mask
    if enemies:
        # Dry: fighting is pointless, so back off from close threats and
        # otherwise fall through to the restock objective below.
        nearest = min(enemies, key=choose_key)
        a, r = ego(nearest)
        if max(abs(a), abs(r)) <= 2:
            err, turn = _ego_turn(a, r)
            set_turn(turn)
            ba, br = EGO_DIRS[(turn + 4) % 8]
            if not is_wall(-ba, br):
                mask[A_BACK] = 1
            return mask

    channel = 4
    if frame.features[0] < LOW_HEALTH_FRAC and t[2].any():
        channel = 2
    elif frame.features[1] < LOW_AMMO_FRAC and t[3].any():
        channel = 3

    if channel == 4 and in_channel(4, 0, 0):
        # Orbit, as an edge follower: sidestep left while the cell to the
        # left stays inside the zone, otherwise rotate right until it
        # does.  Each choice hinges on a single visible cell.
        if in_channel(4, 0, -1) and not is_wall(0, -1):
            mask[A_STRAFE_L] = 1
        else:
            mask[A_TURN_R] = 1
        return mask

    targets = active(channel)
    if targets:
        travel_to(min(targets, key=choose_key))
    return mask


def scripted_expert(env: ArenaEnv, rng: np.random.Generator | None = None) -> np.ndarray:
    """Demonstrator entry point; acts on the current observation.
    Deterministic; ``rng`` is accepted for interface parity but unused."""
    del rng
    return expert_action_from_view(env.observe(), env.cfg)


def random_policy_mask(n_actions: int, rng: np.random.Generator,
                       p: float = 0.5) -> np.ndarray:
    """Uniform-random concurrent mask (baseline for oracle evaluation)."""
    return (rng.random(n_actions) < p).astype(np.uint8)


def run_episode(env: ArenaEnv, seed: int, policy_fn, max_steps: int | None = None):
    """Roll one episode with ``policy_fn(env) -> mask``; returns (score, steps)."""
    env.reset(seed)
    score = 0.0
    steps = 0
    limit = max_steps if max_steps is not None else env.cfg.horizon
    for _ in range(limit):
        mask = policy_fn(env)
        _, _, reward, done = env.step(mask)
        score += reward
        steps += 1
        if done:
            break
    return score, steps


def env_config_dict(cfg: EnvConfig) -> dict:
    return asdict(cfg)
