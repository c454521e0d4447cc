import { describe, expect, it } from "vitest";
import {
  FrameFormatError,
  controlFrame,
  inputFrame,
  parseServerFrame,
} from "../src/protocol.js";

const HELLO = {
  type: "hello",
  protocol: 1,
  n_actions: 7,
  actions: [
    "forward", "back", "strafe_left", "strafe_right",
    "turn_left", "turn_right", "fire",
  ],
  channels: [
    "walls", "enemies", "pickups_health", "pickups_ammo", "roi", "projectiles",
  ],
  grid: { width: 20, height: 15, walls: [[3, 2], [3, 3]] },
  view_size: 11,
  tick_hz: 20,
  seed: 7,
};

const STATE = {
  type: "state",
  tick: 42,
  status: "running",
  episode: 1,
  score: 3.5,
  reward: 0.02,
  mask: [1, 0, 0, 0, 0, 0, 1],
  step: 41,
  health: 88,
  ammo: 5,
  agent: { x: 4, y: 7, facing: 2 },
  enemies: [{ x: 9, y: 7 }],
  pickups: [{ x: 1, y: 1, kind: "health" }],
  projectiles: [{ x: 5, y: 7, dx: 1, dy: 0 }],
  roi: { x: 10, y: 7, radius: 3 },
};

describe("parseServerFrame", () => {
  it("accepts a well-formed hello", () => {
    const frame = parseServerFrame(JSON.stringify(HELLO));
    expect(frame.type).toBe("hello");
    if (frame.type === "hello") {
      expect(frame.actions).toHaveLength(7);
      expect(frame.grid.walls).toEqual([[3, 2], [3, 3]]);
      expect(frame.tick_hz).toBe(20);
    }
  });

  it("rejects a hello from a different protocol version", () => {
    expect(() => parseServerFrame(JSON.stringify({ ...HELLO, protocol: 2 })))
      .toThrow(FrameFormatError);
  });

  it("rejects a hello whose action list disagrees with n_actions", () => {
    expect(() => parseServerFrame(JSON.stringify({ ...HELLO, n_actions: 5 })))
      .toThrow(FrameFormatError);
  });

  it("accepts a full running state frame", () => {
    const frame = parseServerFrame(JSON.stringify(STATE));
    expect(frame.type).toBe("state");
    if (frame.type === "state") {
      expect(frame.mask).toEqual([1, 0, 0, 0, 0, 0, 1]);
      expect(frame.agent).toEqual({ x: 4, y: 7, facing: 2 });
      expect(frame.roi?.radius).toBe(3);
    }
  });

  it("accepts a minimal idle state frame without entity fields", () => {
    const idle = {
      type: "state", tick: 0, status: "idle", episode: 0,
      score: 0, reward: 0, mask: [0, 0, 0, 0, 0, 0, 0],
    };
    const frame = parseServerFrame(JSON.stringify(idle));
    expect(frame.type).toBe("state");
    if (frame.type === "state") expect(frame.agent).toBeUndefined();
  });

  it.each([
    ["non-JSON text", "not json {"],
    ["a JSON array", "[1,2,3]"],
    ["an unknown type", JSON.stringify({ type: "telemetry" })],
    ["a missing type", JSON.stringify({ tick: 3 })],
    ["a non-binary mask", JSON.stringify({ ...STATE, mask: [0, 2, 1] })],
    ["a missing score", (() => {
      const { score: _dropped, ...rest } = STATE;
      return JSON.stringify(rest);
    })()],
    ["an unknown status", JSON.stringify({ ...STATE, status: "warming-up" })],
    ["a NaN-smuggling tick", JSON.stringify({ ...STATE, tick: "7" })],
  ])("rejects %s", (_label, text) => {
    expect(() => parseServerFrame(text)).toThrow(FrameFormatError);
  });

  it("accepts saved and error frames", () => {
    const saved = parseServerFrame(JSON.stringify(
      { type: "saved", path: "/tmp/demo.jsonl", episodes: 3, steps: 412 }));
    expect(saved.type).toBe("saved");
    const err = parseServerFrame(JSON.stringify(
      { type: "error", message: "nothing to save", fatal: false }));
    expect(err.type).toBe("error");
    if (err.type === "error") expect(err.fatal).toBe(false);
  });

  it("rejects an error frame without the fatal flag", () => {
    expect(() => parseServerFrame(JSON.stringify(
      { type: "error", message: "hm" }))).toThrow(FrameFormatError);
  });
});

describe("client frame builders", () => {
  it("builds input frames the bridge understands", () => {
    expect(JSON.parse(inputFrame([0, 1, 0, 0, 0, 0, 1])))
      .toEqual({ type: "input", mask: [0, 1, 0, 0, 0, 0, 1] });
  });

  it("builds control frames", () => {
    expect(JSON.parse(controlFrame("start")))
      .toEqual({ type: "control", op: "start" });
    expect(JSON.parse(controlFrame("save")))
      .toEqual({ type: "control", op: "save" });
  });
});
