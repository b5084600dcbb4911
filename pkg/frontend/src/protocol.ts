/**
 * Wire protocol (version 1) between the viewer and the render service.
 *
 * Camera convention: OpenCV-style pinhole. `rotation` is the row-major 3x3
 * world-to-camera matrix (camera x right, y down, z forward), `translation`
 * the 3-vector t with x_cam = R * x_world + t. Pixels: u = fx*x/z + cx,
 * v = fy*y/z + cy.
 *
 * Interpolation factors are snapped to 1/256 steps so slider positions map
 * onto the server's appearance-cache keys.
 */

export const PROTOCOL_VERSION = 1;
export const INTERP_STEPS = 256;

export interface CameraSpec {
  rotation: number[];     // 9 entries, row major
  translation: number[];  // 3 entries
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export type Encoding = "png" | "jpeg";

export type ClientMessage =
  | { type: "set_camera"; camera: CameraSpec }
  | { type: "set_appearance"; index: number }
  | { type: "interp"; a: number; b: number; t: number }
  | { type: "set_encoding"; encoding: Encoding };

export interface FrameMessage {
  type: "frame";
  seq: number;
  encoding: Encoding;
  data: string; // base64 payload
  cache_hit?: boolean;
  render_millis?: number;
  snapshot_version?: number;
}

export interface ErrorMessage {
  type: "error";
  reason: string;
}

export type ServerMessage = FrameMessage | ErrorMessage;

export function snapInterpolation(t: number): number {
  const clamped = Math.min(1, Math.max(0, t));
  return Math.round(clamped * INTERP_STEPS) / INTERP_STEPS;
}

export function cameraMessage(camera: CameraSpec): ClientMessage {
  return { type: "set_camera", camera };
}

export function appearanceMessage(index: number): ClientMessage {
  if (!Number.isInteger(index) || index < 0) {
    throw new Error(`appearance index must be a non-negative integer, got ${index}`);
  }
  return { type: "set_appearance", index };
}

export function interpolationMessage(a: number, b: number, t: number): ClientMessage {
  return { type: "interp", a, b, t: snapInterpolation(t) };
}

export function validateCamera(camera: CameraSpec): void {
  if (camera.rotation.length !== 9) throw new Error("rotation needs 9 entries");
  if (camera.translation.length !== 3) throw new Error("translation needs 3 entries");
  for (const v of [...camera.rotation, ...camera.translation,
                   camera.fx, camera.fy, camera.cx, camera.cy]) {
    if (!Number.isFinite(v)) throw new Error("camera contains non-finite values");
  }
  if (camera.fx <= 0 || camera.fy <= 0) throw new Error("focal lengths must be positive");
  if (!Number.isInteger(camera.width) || !Number.isInteger(camera.height) ||
      camera.width < 1 || camera.height < 1) {
    throw new Error("image size must be positive integers");
  }
}

export function validateClientMessage(msg: ClientMessage): void {
  switch (msg.type) {
    case "set_camera":
      validateCamera(msg.camera);
      return;
    case "set_appearance":
      if (!Number.isInteger(msg.index) || msg.index < 0) {
        throw new Error("bad appearance index");
      }
      return;
    case "interp":
      if (!Number.isInteger(msg.a) || !Number.isInteger(msg.b)) {
        throw new Error("interp endpoints must be image indices");
      }
      if (msg.t < 0 || msg.t > 1) throw new Error("interp factor out of range");
      if (Math.round(msg.t * INTERP_STEPS) / INTERP_STEPS !== msg.t) {
        throw new Error("interp factor must be snapped to 1/256 steps");
      }
      return;
    case "set_encoding":
      if (msg.encoding !== "png" && msg.encoding !== "jpeg") {
        throw new Error("unknown encoding");
      }
      return;
    default: {
      const never: never = msg;
      throw new Error(`unknown message ${JSON.stringify(never)}`);
    }
  }
}

export function parseServerMessage(raw: string): ServerMessage {
  const parsed = JSON.parse(raw);
  if (parsed.type === "frame") {
    if (typeof parsed.seq !== "number" || typeof parsed.data !== "string") {
      throw new Error("malformed frame message");
    }
    return parsed as FrameMessage;
  }
  if (parsed.type === "error") {
    return parsed as ErrorMessage;
  }
  throw new Error(`unknown server message type ${parsed.type}`);
}
