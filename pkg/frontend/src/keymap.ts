/** Keyboard state tracking: the set of held, bound keys maps to one
 * action mask in the server's action order.
 *
 * Bindings go from KeyboardEvent.code to an action name from the hello
 * frame, so they survive keyboard layouts.  Unbound keys never change
 * the mask.  All bindings are remappable at runtime through `rebind`.
 */

export type Bindings = Record<string, string>;

export const DEFAULT_BINDINGS: Bindings = {
  KeyW: "forward",
  KeyS: "back",
  KeyA: "strafe_left",
  KeyD: "strafe_right",
  KeyQ: "turn_left",
  KeyE: "turn_right",
  Space: "fire",
};

export class KeyTracker {
  private held = new Set<string>();
  private bindings: Bindings;
  private actionIndex = new Map<string, number>();

  constructor(actions: string[], bindings: Bindings = DEFAULT_BINDINGS) {
    this.bindings = { ...bindings };
    actions.forEach((name, i) => this.actionIndex.set(name, i));
  }

  /** Returns true when the mask may have changed. */
  press(code: string): boolean {
    if (!(code in this.bindings) || this.held.has(code)) return false;
    this.held.add(code);
    return true;
  }

  release(code: string): boolean {
    return this.held.delete(code);
  }

  /** Drop everything held; used on window blur so keys never stick. */
  clear(): boolean {
    if (this.held.size === 0) return false;
    this.held.clear();
    return true;
  }

  /** Action mask over the server's action list, one 0/1 per action. */
  mask(): number[] {
    const out = new Array<number>(this.actionIndex.size).fill(0);
    for (const code of this.held) {
      const idx = this.actionIndex.get(this.bindings[code] ?? "");
      if (idx !== undefined) out[idx] = 1;
    }
    return out;
  }

  heldCodes(): string[] {
    return [...this.held].sort();
  }

  binding(action: string): string | undefined {
    for (const [code, name] of Object.entries(this.bindings)) {
      if (name === action) return code;
    }
    return undefined;
  }

  currentBindings(): Bindings {
    return { ...this.bindings };
  }

  /** Point `action` at `code`, displacing whatever either had before.
   * Returns false for actions the server never announced. */
  rebind(action: string, code: string): boolean {
    if (!this.actionIndex.has(action)) return false;
    for (const [oldCode, name] of Object.entries(this.bindings)) {
      if (name === action) delete this.bindings[oldCode];
    }
    delete this.bindings[code];
    this.bindings[code] = action;
    this.held.delete(code);
    return true;
  }
}
