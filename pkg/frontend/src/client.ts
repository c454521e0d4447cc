/** Websocket session against the demonstration bridge.
 *
 * Owns the connection lifecycle and the input cadence.  The held-key
 * mask is pushed whenever it changes, rate-limited to the server tick,
 * and repeated once per tick as a heartbeat so the server always holds
 * a fresh copy.  Nothing here simulates the arena: every value shown to
 * the user comes from the latest state frame verbatim.
 */

import {
  ControlOp,
  ErrorFrame,
  FrameFormatError,
  HelloFrame,
  SavedFrame,
  StateFrame,
  controlFrame,
  inputFrame,
  parseServerFrame,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(code?: number, reason?: string): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: { code: number; reason: string }) => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface SessionStats {
  frames: number;
  malformed: number;
  inputsSent: number;
  savedEpisodes: number;
  savedSteps: number;
}

export interface ClientEvents {
  onHello?: (hello: HelloFrame) => void;
  onState?: (state: StateFrame) => void;
  onSaved?: (saved: SavedFrame) => void;
  onError?: (error: ErrorFrame) => void;
  onStatus?: (status: ConnectionStatus) => void;
  /** malformed server frame: logged and skipped, never thrown */
  onFault?: (message: string) => void;
}

const browserFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as SocketLike;

export class BridgeClient {
  readonly stats: SessionStats = {
    frames: 0,
    malformed: 0,
    inputsSent: 0,
    savedEpisodes: 0,
    savedSteps: 0,
  };
  hello: HelloFrame | null = null;
  lastState: StateFrame | null = null;

  private socket: SocketLike | null = null;
  private statusValue: ConnectionStatus = "closed";
  private desiredMask: number[] = [];
  private dirty = false;
  private lastSentAt = -Infinity;
  private heartbeat: ReturnType<typeof setInterval> | null = null;

  constructor(
    private url: string,
    private events: ClientEvents = {},
    private factory: SocketFactory = browserFactory,
    private now: () => number = Date.now,
  ) {}

  get status(): ConnectionStatus {
    return this.statusValue;
  }

  connect(): void {
    if (this.statusValue !== "closed") return;
    this.setStatus("connecting");
    const sock = this.factory(this.url);
    this.socket = sock;
    sock.onopen = () => this.setStatus("open");
    sock.onmessage = (ev) => this.handleMessage(String(ev.data));
    sock.onerror = () => {};
    sock.onclose = () => {
      this.stopHeartbeat();
      this.socket = null;
      this.setStatus("closed");
    };
  }

  /** Drop the old session (if any) and dial again.  The server starts a
   * brand-new session per connection, so any interrupted episode is
   * gone by design. */
  retry(): void {
    if (this.socket) {
      const sock = this.socket;
      this.socket = null;
      sock.onclose = null;
      sock.close(1000, "client retry");
      this.stopHeartbeat();
      this.setStatus("closed");
    }
    this.hello = null;
    this.lastState = null;
    this.connect();
  }

  close(): void {
    if (this.socket) this.socket.close(1000, "client close");
  }

  /** Adopt a new held-key mask.  Sends right away when the tick-rate
   * limiter allows, otherwise leaves it for the next heartbeat. */
  setMask(mask: number[]): void {
    this.desiredMask = [...mask];
    this.dirty = true;
    if (!this.canSend()) return;
    if (this.now() - this.lastSentAt >= this.tickMillis()) {
      this.sendMaskNow();
    }
  }

  control(op: ControlOp): void {
    if (this.canSend()) this.socket!.send(controlFrame(op));
  }

  private canSend(): boolean {
    return this.socket !== null && this.statusValue === "open";
  }

  private tickMillis(): number {
    return this.hello ? 1000 / this.hello.tick_hz : Infinity;
  }

  private sendMaskNow(): void {
    if (!this.canSend()) return;
    if (this.desiredMask.length === 0 && this.hello) {
      this.desiredMask = new Array(this.hello.n_actions).fill(0);
    }
    this.socket!.send(inputFrame(this.desiredMask));
    this.lastSentAt = this.now();
    this.dirty = false;
    this.stats.inputsSent += 1;
  }

  private startHeartbeat(): void {
    this.stopHeartbeat();
    this.heartbeat = setInterval(() => this.sendMaskNow(), this.tickMillis());
  }

  private stopHeartbeat(): void {
    if (this.heartbeat !== null) {
      clearInterval(this.heartbeat);
      this.heartbeat = null;
    }
  }

  private setStatus(status: ConnectionStatus): void {
    if (this.statusValue === status) return;
    this.statusValue = status;
    this.events.onStatus?.(status);
  }

  private handleMessage(text: string): void {
    let frame;
    try {
      frame = parseServerFrame(text);
    } catch (err) {
      if (err instanceof FrameFormatError) {
        this.stats.malformed += 1;
        console.warn("dropping malformed server frame:", err.message);
        this.events.onFault?.(err.message);
        return;
      }
      throw err;
    }
    switch (frame.type) {
      case "hello":
        this.hello = frame;
        if (this.desiredMask.length === 0) {
          this.desiredMask = new Array(frame.n_actions).fill(0);
        }
        this.startHeartbeat();
        this.events.onHello?.(frame);
        break;
      case "state":
        this.lastState = frame;
        this.stats.frames += 1;
        this.events.onState?.(frame);
        break;
      case "saved":
        this.stats.savedEpisodes = frame.episodes;
        this.stats.savedSteps = frame.steps;
        this.events.onSaved?.(frame);
        break;
      case "error":
        this.events.onError?.(frame);
        break;
    }
  }
}
