import { describe, expect, it } from "vitest";
import { DEFAULT_BINDINGS, KeyTracker } from "../src/keymap.js";

const ACTIONS = [
  "forward", "back", "strafe_left", "strafe_right",
  "turn_left", "turn_right", "fire",
];

type Step = {
  ev: "down" | "up" | "blur";
  code?: string;
  mask: number[];
  changed: boolean;
};

// Hand-computed transcript: 50 keyboard transitions with the expected
// mask after each one, written out before the tracker existed.  Indices:
// forward 0, back 1, strafe_left 2, strafe_right 3, turn_left 4,
// turn_right 5, fire 6.
const SCRIPT: Step[] = [
  { ev: "down", code: "KeyW", mask: [1, 0, 0, 0, 0, 0, 0], changed: true },
  { ev: "down", code: "Space", mask: [1, 0, 0, 0, 0, 0, 1], changed: true },
  { ev: "down", code: "KeyX", mask: [1, 0, 0, 0, 0, 0, 1], changed: false },
  { ev: "up", code: "KeyX", mask: [1, 0, 0, 0, 0, 0, 1], changed: false },
  { ev: "down", code: "KeyA", mask: [1, 0, 1, 0, 0, 0, 1], changed: true },
  { ev: "down", code: "KeyW", mask: [1, 0, 1, 0, 0, 0, 1], changed: false },
  { ev: "up", code: "KeyW", mask: [0, 0, 1, 0, 0, 0, 1], changed: true },
  { ev: "down", code: "KeyQ", mask: [0, 0, 1, 0, 1, 0, 1], changed: true },
  { ev: "up", code: "Space", mask: [0, 0, 1, 0, 1, 0, 0], changed: true },
  { ev: "down", code: "KeyE", mask: [0, 0, 1, 0, 1, 1, 0], changed: true },
  { ev: "up", code: "KeyQ", mask: [0, 0, 1, 0, 0, 1, 0], changed: true },
  { ev: "up", code: "KeyA", mask: [0, 0, 0, 0, 0, 1, 0], changed: true },
  { ev: "down", code: "KeyS", mask: [0, 1, 0, 0, 0, 1, 0], changed: true },
  { ev: "down", code: "KeyD", mask: [0, 1, 0, 1, 0, 1, 0], changed: true },
  { ev: "up", code: "KeyE", mask: [0, 1, 0, 1, 0, 0, 0], changed: true },
  { ev: "blur", mask: [0, 0, 0, 0, 0, 0, 0], changed: true },
  { ev: "up", code: "KeyS", mask: [0, 0, 0, 0, 0, 0, 0], changed: false },
  { ev: "down", code: "KeyD", mask: [0, 0, 0, 1, 0, 0, 0], changed: true },
  { ev: "down", code: "KeyW", mask: [1, 0, 0, 1, 0, 0, 0], changed: true },
  { ev: "down", code: "Space", mask: [1, 0, 0, 1, 0, 0, 1], changed: true },
  { ev: "down", code: "KeyQ", mask: [1, 0, 0, 1, 1, 0, 1], changed: true },
  { ev: "up", code: "KeyD", mask: [1, 0, 0, 0, 1, 0, 1], changed: true },
  { ev: "down", code: "ShiftLeft", mask: [1, 0, 0, 0, 1, 0, 1], changed: false },
  { ev: "up", code: "KeyW", mask: [0, 0, 0, 0, 1, 0, 1], changed: true },
  { ev: "up", code: "Space", mask: [0, 0, 0, 0, 1, 0, 0], changed: true },
  { ev: "up", code: "KeyQ", mask: [0, 0, 0, 0, 0, 0, 0], changed: true },
  { ev: "up", code: "KeyQ", mask: [0, 0, 0, 0, 0, 0, 0], changed: false },
  { ev: "down", code: "Space", mask: [0, 0, 0, 0, 0, 0, 1], changed: true },
  { ev: "down", code: "KeyS", mask: [0, 1, 0, 0, 0, 0, 1], changed: true },
  { ev: "down", code: "KeyA", mask: [0, 1, 1, 0, 0, 0, 1], changed: true },
  { ev: "down", code: "KeyD", mask: [0, 1, 1, 1, 0, 0, 1], changed: true },
  { ev: "down", code: "KeyE", mask: [0, 1, 1, 1, 0, 1, 1], changed: true },
  { ev: "up", code: "KeyS", mask: [0, 0, 1, 1, 0, 1, 1], changed: true },
  { ev: "blur", mask: [0, 0, 0, 0, 0, 0, 0], changed: true },
  { ev: "blur", mask: [0, 0, 0, 0, 0, 0, 0], changed: false },
  { ev: "down", code: "KeyQ", mask: [0, 0, 0, 0, 1, 0, 0], changed: true },
  { ev: "down", code: "KeyE", mask: [0, 0, 0, 0, 1, 1, 0], changed: true },
  { ev: "up", code: "KeyE", mask: [0, 0, 0, 0, 1, 0, 0], changed: true },
  { ev: "down", code: "KeyW", mask: [1, 0, 0, 0, 1, 0, 0], changed: true },
  { ev: "down", code: "KeyD", mask: [1, 0, 0, 1, 1, 0, 0], changed: true },
  { ev: "up", code: "KeyQ", mask: [1, 0, 0, 1, 0, 0, 0], changed: true },
  { ev: "down", code: "Numpad0", mask: [1, 0, 0, 1, 0, 0, 0], changed: false },
  { ev: "up", code: "Numpad0", mask: [1, 0, 0, 1, 0, 0, 0], changed: false },
  { ev: "up", code: "KeyW", mask: [0, 0, 0, 1, 0, 0, 0], changed: true },
  { ev: "down", code: "KeyA", mask: [0, 0, 1, 1, 0, 0, 0], changed: true },
  { ev: "down", code: "KeyS", mask: [0, 1, 1, 1, 0, 0, 0], changed: true },
  { ev: "up", code: "KeyD", mask: [0, 1, 1, 0, 0, 0, 0], changed: true },
  { ev: "up", code: "KeyA", mask: [0, 1, 0, 0, 0, 0, 0], changed: true },
  { ev: "up", code: "KeyS", mask: [0, 0, 0, 0, 0, 0, 0], changed: true },
  { ev: "down", code: "Space", mask: [0, 0, 0, 0, 0, 0, 1], changed: true },
];

describe("KeyTracker", () => {
  it("replays the 50-transition transcript exactly", () => {
    expect(SCRIPT).toHaveLength(50);
    const tracker = new KeyTracker(ACTIONS);
    SCRIPT.forEach((step, i) => {
      const changed =
        step.ev === "down" ? tracker.press(step.code!)
        : step.ev === "up" ? tracker.release(step.code!)
        : tracker.clear();
      expect(changed, `transition ${i + 1} changed flag`).toBe(step.changed);
      expect(tracker.mask(), `transition ${i + 1} mask`).toEqual(step.mask);
    });
  });

  it("starts with the all-zeros mask", () => {
    expect(new KeyTracker(ACTIONS).mask()).toEqual([0, 0, 0, 0, 0, 0, 0]);
  });

  it("maps the documented defaults", () => {
    expect(DEFAULT_BINDINGS).toEqual({
      KeyW: "forward", KeyS: "back", KeyA: "strafe_left",
      KeyD: "strafe_right", KeyQ: "turn_left", KeyE: "turn_right",
      Space: "fire",
    });
  });

  it("ignores keys bound to actions the server never announced", () => {
    const tracker = new KeyTracker(["forward", "fire"], {
      KeyW: "forward", Space: "fire", KeyQ: "turn_left",
    });
    tracker.press("KeyQ"); // bound, but turn_left is not a server action
    tracker.press("KeyW");
    expect(tracker.mask()).toEqual([1, 0]);
  });

  it("rebinds an action to a new key", () => {
    const tracker = new KeyTracker(ACTIONS);
    expect(tracker.rebind("fire", "KeyJ")).toBe(true);
    expect(tracker.press("Space")).toBe(false); // old key now unbound
    expect(tracker.press("KeyJ")).toBe(true);
    expect(tracker.mask()).toEqual([0, 0, 0, 0, 0, 0, 1]);
    expect(tracker.binding("fire")).toBe("KeyJ");
  });

  it("rebinding onto a taken key displaces the old owner", () => {
    const tracker = new KeyTracker(ACTIONS);
    tracker.rebind("forward", "KeyS"); // steals back's key
    expect(tracker.binding("forward")).toBe("KeyS");
    expect(tracker.binding("back")).toBeUndefined();
    tracker.press("KeyS");
    expect(tracker.mask()).toEqual([1, 0, 0, 0, 0, 0, 0]);
    expect(tracker.press("KeyW")).toBe(false); // forward's old key unbound
  });

  it("refuses to rebind unknown actions", () => {
    const tracker = new KeyTracker(ACTIONS);
    expect(tracker.rebind("jump", "KeyJ")).toBe(false);
  });

  it("a rebound key held at rebind time is released", () => {
    const tracker = new KeyTracker(ACTIONS);
    tracker.press("KeyJ"); // unbound, ignored
    tracker.press("KeyW");
    tracker.rebind("fire", "KeyW"); // W was held as forward
    expect(tracker.mask()).toEqual([0, 0, 0, 0, 0, 0, 0]);
    tracker.press("KeyW");
    expect(tracker.mask()).toEqual([0, 0, 0, 0, 0, 0, 1]);
  });
});
