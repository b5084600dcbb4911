import { describe, expect, it } from "vitest";

import { ViewerConnection } from "../src/connection.js";
import type { SocketLike } from "../src/connection.js";
import { FrameMessage } from "../src/protocol.js";

class MockSocket implements SocketLike {
  sent: string[] = [];
  onmessage: ((event: { data: string }) => void) | null = null;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: ((err: unknown) => void) | null = null;
  closed = false;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  emitFrame(seq: number, data = "QUJD"): void {
    this.onmessage?.({
      data: JSON.stringify({ type: "frame", seq, encoding: "jpeg", data }),
    });
  }
}

const CAMERA = {
  rotation: [1, 0, 0, 0, 1, 0, 0, 0, 1],
  translation: [0, 0, 2],
  fx: 32, fy: 32, cx: 16, cy: 16, width: 32, height: 32,
};

function manualScheduler() {
  const queue: Array<() => void> = [];
  return {
    schedule: (fn: () => void) => queue.push(fn),
    flush: () => {
      while (queue.length) queue.shift()!();
    },
  };
}

describe("viewer connection", () => {
  it("drops stale frames so the display is monotone in seq", () => {
    const socket = new MockSocket();
    const shown: FrameMessage[] = [];
    new ViewerConnection(socket, (f) => shown.push(f));
    socket.emitFrame(1);
    socket.emitFrame(3);
    socket.emitFrame(2); // arrives late: dropped
    socket.emitFrame(4);
    expect(shown.map((f) => f.seq)).toEqual([1, 3, 4]);
  });

  it("coalesces camera drags latest-wins", () => {
    const socket = new MockSocket();
    const sched = manualScheduler();
    const conn = new ViewerConnection(socket, () => {}, () => {}, sched.schedule);
    for (let i = 0; i < 10; i++) {
      conn.setCamera({ ...CAMERA, cx: i });
    }
    sched.flush();
    expect(socket.sent).toHaveLength(1);
    const sent = JSON.parse(socket.sent[0]);
    expect(sent.type).toBe("set_camera");
    expect(sent.camera.cx).toBe(9); // only the newest state went out
  });

  it("displayed frame follows the newest acknowledged state", () => {
    const socket = new MockSocket();
    const sched = manualScheduler();
    const shown: number[] = [];
    const conn = new ViewerConnection(socket, (f) => shown.push(f.seq),
                                      () => {}, sched.schedule);
    conn.setCamera(CAMERA);
    sched.flush();
    socket.emitFrame(1);
    conn.setCamera({ ...CAMERA, cx: 5 });
    conn.setCamera({ ...CAMERA, cx: 6 });
    sched.flush();
    socket.emitFrame(2);
    expect(shown).toEqual([1, 2]);
    expect(socket.sent).toHaveLength(2);
    expect(JSON.parse(socket.sent[1]).camera.cx).toBe(6);
  });

  it("surfaces protocol errors through the status callback", () => {
    const socket = new MockSocket();
    const errors: string[] = [];
    new ViewerConnection(socket, () => {}, (state, detail) => {
      if (state === "error") errors.push(detail ?? "");
    });
    socket.onmessage?.({ data: JSON.stringify({ type: "error", reason: "bad index" }) });
    expect(errors).toEqual(["bad index"]);
  });

  it("validates outgoing appearance messages", () => {
    const socket = new MockSocket();
    const conn = new ViewerConnection(socket, () => {});
    expect(() => conn.setAppearance(-2)).toThrow();
    conn.setInterpolation(0, 1, 0.123456); // snapped internally, must not throw
    const sent = JSON.parse(socket.sent.at(-1)!);
    expect(Math.round(sent.t * 256) / 256).toBe(sent.t);
  });
});
