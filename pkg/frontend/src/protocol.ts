/** Wire format spoken by the demonstration bridge.
 *
 * One JSON object per websocket message in both directions.  The server
 * sends `hello` once after connect, then one `state` per tick, plus
 * `saved` / `error` in response to control frames.  The client sends
 * `input` (the currently held action mask) and `control` frames.
 */

export const PROTOCOL_VERSION = 1;

export interface HelloFrame {
  type: "hello";
  protocol: number;
  n_actions: number;
  actions: string[];
  channels: string[];
  grid: { width: number; height: number; walls: [number, number][] };
  view_size: number;
  tick_hz: number;
  seed: number;
}

export type SessionStatus = "idle" | "running" | "paused" | "ended";

export interface StateFrame {
  type: "state";
  tick: number;
  status: SessionStatus;
  episode: number;
  score: number;
  reward: number;
  mask: number[];
  // present whenever an episode exists (running, paused or ended):
  step?: number;
  health?: number;
  ammo?: number;
  agent?: { x: number; y: number; facing: number };
  enemies?: { x: number; y: number }[];
  pickups?: { x: number; y: number; kind: "health" | "ammo" }[];
  projectiles?: { x: number; y: number; dx: number; dy: number }[];
  roi?: { x: number; y: number; radius: number };
  view?: Record<string, [number, number][]>;
}

export interface SavedFrame {
  type: "saved";
  path: string;
  episodes: number;
  steps: number;
}

export interface ErrorFrame {
  type: "error";
  message: string;
  fatal: boolean;
}

export type ServerFrame = HelloFrame | StateFrame | SavedFrame | ErrorFrame;

export type ControlOp = "start" | "pause" | "reset" | "save";

export class FrameFormatError extends Error {}

function fail(why: string): never {
  throw new FrameFormatError(why);
}

function isRecord(x: unknown): x is Record<string, unknown> {
  return typeof x === "object" && x !== null && !Array.isArray(x);
}

function num(obj: Record<string, unknown>, key: string): number {
  const v = obj[key];
  if (typeof v !== "number" || !Number.isFinite(v)) {
    fail(`field "${key}" is not a finite number`);
  }
  return v;
}

function str(obj: Record<string, unknown>, key: string): string {
  const v = obj[key];
  if (typeof v !== "string") fail(`field "${key}" is not a string`);
  return v;
}

function maskOf(obj: Record<string, unknown>): number[] {
  const v = obj["mask"];
  if (!Array.isArray(v) || v.some((b) => b !== 0 && b !== 1)) {
    fail('field "mask" is not a 0/1 array');
  }
  return v as number[];
}

const STATUSES: SessionStatus[] = ["idle", "running", "paused", "ended"];

/** Parse and validate one server message.  Throws FrameFormatError on
 * anything that does not match the protocol; callers log and skip. */
export function parseServerFrame(text: string): ServerFrame {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    fail("message is not valid JSON");
  }
  if (!isRecord(raw)) fail("message is not a JSON object");
  const type = raw["type"];
  if (type === "hello") {
    const grid = raw["grid"];
    if (!isRecord(grid) || !Array.isArray(grid["walls"])) {
      fail('hello frame missing "grid"');
    }
    if (!Array.isArray(raw["actions"]) || !Array.isArray(raw["channels"])) {
      fail("hello frame missing action/channel lists");
    }
    const hello = raw as unknown as HelloFrame;
    if (hello.protocol !== PROTOCOL_VERSION) {
      fail(`unsupported protocol version ${hello.protocol}`);
    }
    num(grid, "width");
    num(grid, "height");
    num(raw, "tick_hz");
    num(raw, "view_size");
    if (hello.actions.length !== num(raw, "n_actions")) {
      fail("hello action list length disagrees with n_actions");
    }
    return hello;
  }
  if (type === "state") {
    num(raw, "tick");
    num(raw, "episode");
    num(raw, "score");
    num(raw, "reward");
    maskOf(raw);
    const status = str(raw, "status");
    if (!STATUSES.includes(status as SessionStatus)) {
      fail(`unknown session status "${status}"`);
    }
    return raw as unknown as StateFrame;
  }
  if (type === "saved") {
    str(raw, "path");
    num(raw, "episodes");
    num(raw, "steps");
    return raw as unknown as SavedFrame;
  }
  if (type === "error") {
    str(raw, "message");
    if (typeof raw["fatal"] !== "boolean") fail('error frame missing "fatal"');
    return raw as unknown as ErrorFrame;
  }
  fail(`unknown frame type ${JSON.stringify(type)}`);
}

export function inputFrame(mask: number[]): string {
  return JSON.stringify({ type: "input", mask });
}

export function controlFrame(op: ControlOp): string {
  return JSON.stringify({ type: "control", op });
}
