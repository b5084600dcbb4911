/**
 * Live session with the render service.
 *
 * Outgoing camera updates are coalesced client-side (at most one in flight
 * per animation tick, latest wins); incoming frames are dropped unless
 * their sequence number advances, so the display never goes backwards.
 */

import {
  CameraSpec,
  ClientMessage,
  FrameMessage,
  ServerMessage,
  appearanceMessage,
  cameraMessage,
  interpolationMessage,
  parseServerMessage,
  validateClientMessage,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((event: { data: string }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: ((err: unknown) => void) | null;
}

export type FrameHandler = (frame: FrameMessage) => void;
export type StatusHandler = (status: "connecting" | "open" | "closed" | "error",
                             detail?: string) => void;

export class ViewerConnection {
  private socket: SocketLike;
  private lastSeq = 0;
  private pendingCamera: CameraSpec | null = null;
  private flushScheduled = false;
  private scheduler: (fn: () => void) => void;
  framesShown = 0;
  framesDropped = 0;

  constructor(
    socket: SocketLike,
    private onFrame: FrameHandler,
    private onStatus: StatusHandler = () => {},
    scheduler?: (fn: () => void) => void,
  ) {
    this.socket = socket;
    this.scheduler = scheduler ?? ((fn) => setTimeout(fn, 0));
    this.onStatus("connecting");
    socket.onopen = () => this.onStatus("open");
    socket.onclose = () => this.onStatus("closed");
    socket.onerror = (err) => this.onStatus("error", String(err));
    socket.onmessage = (event) => this.handleMessage(event.data);
  }

  private handleMessage(raw: string): void {
    let msg: ServerMessage;
    try {
      msg = parseServerMessage(raw);
    } catch (err) {
      this.onStatus("error", String(err));
      return;
    }
    if (msg.type === "error") {
      this.onStatus("error", msg.reason);
      return;
    }
    if (msg.seq <= this.lastSeq) {
      this.framesDropped += 1;
      return; // stale frame
    }
    this.lastSeq = msg.seq;
    this.framesShown += 1;
    this.onFrame(msg);
  }

  private sendMessage(msg: ClientMessage): void {
    validateClientMessage(msg);
    this.socket.send(JSON.stringify(msg));
  }

  /** Queue a camera update; consecutive calls before the flush collapse. */
  setCamera(camera: CameraSpec): void {
    this.pendingCamera = camera;
    if (this.flushScheduled) return;
    this.flushScheduled = true;
    this.scheduler(() => {
      this.flushScheduled = false;
      if (this.pendingCamera !== null) {
        this.sendMessage(cameraMessage(this.pendingCamera));
        this.pendingCamera = null;
      }
    });
  }

  setAppearance(index: number): void {
    this.sendMessage(appearanceMessage(index));
  }

  setInterpolation(a: number, b: number, t: number): void {
    this.sendMessage(interpolationMessage(a, b, t));
  }

  setEncoding(encoding: "png" | "jpeg"): void {
    this.sendMessage({ type: "set_encoding", encoding });
  }

  close(): void {
    this.socket.close();
  }
}

export interface SceneInfo {
  protocol_version: number;
  name: string;
  n_gaussians: number;
  n_images: number;
  image_size: [number, number];
  thumbnails: string[];
  cameras: CameraSpec[];
}

export async function fetchSceneInfo(baseUrl: string): Promise<SceneInfo> {
  const resp = await fetch(`${baseUrl}/api/scene`);
  if (!resp.ok) {
    throw new Error(`scene catalog request failed: ${resp.status}`);
  }
  return (await resp.json()) as SceneInfo;
}
