/** Top-down tile view of the arena, drawn purely from the latest state
 * frame.  The renderer never extrapolates or animates between frames;
 * if the server goes quiet the picture simply stops moving.
 *
 * Everything is painted with axis-aligned rectangle fills, so any
 * surface that offers `fillStyle` + `fillRect` works - the browser's
 * 2D canvas context in production, a tiny raster fake in tests.
 */

import { HelloFrame, StateFrame } from "./protocol.js";

/** Fixed color legend (also documented in the README):
 *  floor dark slate, walls grey, capture zone teal tint, agent amber
 *  with a white facing marker, enemies red, health boxes green, ammo
 *  boxes blue, projectiles pale yellow. */
export const COLORS = {
  floor: "#14141c",
  wall: "#555a6e",
  roi: "#1e4d44",
  agent: "#ffd23f",
  facing: "#ffffff",
  enemy: "#e5484d",
  health: "#46c98c",
  ammo: "#4f8ff7",
  projectile: "#f2efe5",
} as const;

/** Facing index to screen-space unit step, index 0 pointing up and
 * advancing clockwise; matches the arena's facing convention. */
export const FACING_STEPS: ReadonlyArray<readonly [number, number]> = [
  [0, -1], [1, -1], [1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1],
];

export interface RectPainter {
  fillStyle: string | CanvasGradient | CanvasPattern;
  fillRect(x: number, y: number, w: number, h: number): void;
}

function cellRect(
  p: RectPainter, color: string, x: number, y: number, cell: number,
  inset = 0,
): void {
  p.fillStyle = color;
  p.fillRect(
    Math.round(x * cell + inset),
    Math.round(y * cell + inset),
    Math.round(cell - 2 * inset),
    Math.round(cell - 2 * inset),
  );
}

function inGrid(hello: HelloFrame, x: number, y: number): boolean {
  return x >= 0 && y >= 0 && x < hello.grid.width && y < hello.grid.height;
}

export function drawGrid(p: RectPainter, hello: HelloFrame, cell: number): void {
  p.fillStyle = COLORS.floor;
  p.fillRect(0, 0, hello.grid.width * cell, hello.grid.height * cell);
  for (const [x, y] of hello.grid.walls) {
    cellRect(p, COLORS.wall, x, y, cell);
  }
}

/** Paint one frame.  Returns false (drawing nothing) when a non-idle
 * frame is missing the entity fields the server contract promises;
 * the caller logs such frames and keeps the previous picture. */
export function renderFrame(
  p: RectPainter, hello: HelloFrame, state: StateFrame, cell: number,
): boolean {
  if (state.status === "idle") {
    drawGrid(p, hello, cell);
    return true;
  }
  if (
    state.agent === undefined ||
    state.roi === undefined ||
    !Array.isArray(state.enemies) ||
    !Array.isArray(state.pickups) ||
    !Array.isArray(state.projectiles)
  ) {
    return false;
  }

  drawGrid(p, hello, cell);

  const roi = state.roi;
  const r2 = roi.radius * roi.radius;
  for (let y = 0; y < hello.grid.height; y++) {
    for (let x = 0; x < hello.grid.width; x++) {
      const dx = x - roi.x;
      const dy = y - roi.y;
      if (dx * dx + dy * dy <= r2) cellRect(p, COLORS.roi, x, y, cell);
    }
  }
  for (const [x, y] of hello.grid.walls) {
    cellRect(p, COLORS.wall, x, y, cell);
  }

  for (const box of state.pickups) {
    const color = box.kind === "health" ? COLORS.health : COLORS.ammo;
    cellRect(p, color, box.x, box.y, cell, cell / 6);
  }
  for (const shot of state.projectiles) {
    if (inGrid(hello, shot.x, shot.y)) {
      cellRect(p, COLORS.projectile, shot.x, shot.y, cell, cell / 3);
    }
  }
  for (const foe of state.enemies) {
    cellRect(p, COLORS.enemy, foe.x, foe.y, cell, cell / 8);
  }

  cellRect(p, COLORS.agent, state.agent.x, state.agent.y, cell, cell / 8);
  const step = FACING_STEPS[state.agent.facing % 8] ?? [0, -1];
  const cx = (state.agent.x + 0.5) * cell + step[0] * cell * 0.3;
  const cy = (state.agent.y + 0.5) * cell + step[1] * cell * 0.3;
  const side = Math.max(2, Math.round(cell / 4));
  p.fillStyle = COLORS.facing;
  p.fillRect(
    Math.round(cx - side / 2), Math.round(cy - side / 2), side, side,
  );
  return true;
}
