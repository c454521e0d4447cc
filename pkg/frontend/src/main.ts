/** Page wiring: connects the bridge client, keyboard capture, renderer
 * and HUD.  All game values on screen are read from the latest state
 * frame; this file owns only DOM plumbing.
 */

import { BridgeClient } from "./client.js";
import { KeyTracker } from "./keymap.js";
import { HelloFrame, StateFrame } from "./protocol.js";
import { COLORS, renderFrame } from "./renderer.js";

const CELL = 24;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("arena");
const banner = el<HTMLDivElement>("banner");
const hud = {
  status: el<HTMLSpanElement>("hud-status"),
  episode: el<HTMLSpanElement>("hud-episode"),
  score: el<HTMLSpanElement>("hud-score"),
  health: el<HTMLSpanElement>("hud-health"),
  ammo: el<HTMLSpanElement>("hud-ammo"),
  tick: el<HTMLSpanElement>("hud-tick"),
  keys: el<HTMLSpanElement>("hud-keys"),
  stats: el<HTMLSpanElement>("hud-stats"),
};
const bindingsPanel = el<HTMLDivElement>("bindings");

let tracker: KeyTracker | null = null;
let rebindTarget: string | null = null;

const wsUrl =
  new URLSearchParams(location.search).get("ws") ?? "ws://127.0.0.1:8765";

const client = new BridgeClient(wsUrl, {
  onHello: (hello: HelloFrame) => {
    canvas.width = hello.grid.width * CELL;
    canvas.height = hello.grid.height * CELL;
    tracker = new KeyTracker(hello.actions);
    renderBindings(hello);
    banner.hidden = true;
  },
  onState: (state: StateFrame) => {
    hud.status.textContent = state.status;
    hud.episode.textContent = String(state.episode);
    hud.score.textContent = state.score.toFixed(2);
    hud.health.textContent =
      state.health === undefined ? "-" : String(state.health);
    hud.ammo.textContent = state.ammo === undefined ? "-" : String(state.ammo);
    hud.tick.textContent = String(state.tick);
    hud.stats.textContent =
      `${client.stats.frames} frames, ${client.stats.savedEpisodes} episodes saved`;
    const ctx = canvas.getContext("2d");
    if (ctx && client.hello && !renderFrame(ctx, client.hello, state, CELL)) {
      console.warn("state frame missing entity fields; skipped", state.tick);
    }
  },
  onSaved: (saved) => {
    hud.stats.textContent =
      `saved ${saved.episodes} episodes (${saved.steps} steps) to ${saved.path}`;
  },
  onError: (err) => {
    banner.hidden = false;
    banner.textContent = `server error: ${err.message}`;
  },
  onStatus: (status) => {
    banner.hidden = status === "open";
    if (status !== "open") {
      banner.innerHTML = "";
      banner.append(
        status === "connecting" ? "connecting… " : "disconnected ",
        retryButton(),
      );
    }
  },
});

function retryButton(): HTMLButtonElement {
  const b = document.createElement("button");
  b.textContent = "retry";
  b.onclick = () => client.retry();
  return b;
}

function renderBindings(hello: HelloFrame): void {
  bindingsPanel.innerHTML = "";
  for (const action of hello.actions) {
    const row = document.createElement("div");
    const code = tracker?.binding(action) ?? "(unbound)";
    const label = document.createElement("span");
    label.textContent = `${action}: ${rebindTarget === action ? "press a key…" : code} `;
    const btn = document.createElement("button");
    btn.textContent = "rebind";
    btn.onclick = () => {
      rebindTarget = action;
      renderBindings(hello);
    };
    row.append(label, btn);
    bindingsPanel.append(row);
  }
}

window.addEventListener("keydown", (ev) => {
  if (!tracker) return;
  if (rebindTarget) {
    tracker.rebind(rebindTarget, ev.code);
    rebindTarget = null;
    if (client.hello) renderBindings(client.hello);
    ev.preventDefault();
    return;
  }
  if (tracker.press(ev.code)) {
    client.setMask(tracker.mask());
    hud.keys.textContent = tracker.heldCodes().join(" ");
    ev.preventDefault();
  }
});

window.addEventListener("keyup", (ev) => {
  if (tracker?.release(ev.code)) {
    client.setMask(tracker.mask());
    hud.keys.textContent = tracker.heldCodes().join(" ");
  }
});

window.addEventListener("blur", () => {
  if (tracker?.clear()) {
    client.setMask(tracker.mask());
    hud.keys.textContent = "";
  }
});

for (const op of ["start", "pause", "reset", "save"] as const) {
  el<HTMLButtonElement>(`btn-${op}`).onclick = () => client.control(op);
}

document.body.style.setProperty("--floor", COLORS.floor);
client.connect();
