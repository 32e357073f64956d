/** Renderer side of the bridge wire protocol.
 *
 * Transport: newline-delimited JSON. The simulator listens; this client
 * dials in, answers the single `hello` with `hello_ack`, then serves
 * `render` -> `frame` exchanges until the peer closes. One request is in
 * flight at a time.
 */

import * as net from "node:net";
import type { Readable, Writable } from "node:stream";

export const BRIDGE_VERSION = 1;

export interface WireCamera {
  name: string;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  ego_to_camera: number[][];
}

export interface HelloMsg {
  type: "hello";
  b2dr_bridge_version: number;
  rig: WireCamera[];
  resolution: [number, number];
}

export interface RefEntry {
  image: string;
  pose: { x: number; y: number; heading: number };
  offset?: number;
  side: "front" | "rear";
}

export interface RenderMsg {
  type: "render";
  tick: number;
  seed: number;
  cameras: string[];
  masks: string[];
  prev: string[] | null;
  prev_noise_level: number | null;
  refs: RefEntry[][];
  ego_pose: { x: number; y: number; heading: number };
  boxes: unknown[];
  map: unknown[];
}

export class ProtocolViolation extends Error {}

export class LineChannel {
  private buf = "";
  private pending: string[] = [];
  private waiters: Array<(line: string | null) => void> = [];
  private closed = false;

  constructor(
    private readonly input: Readable,
    private readonly output: Writable,
  ) {
    input.on("data", (chunk: Buffer) => {
      this.buf += chunk.toString("utf-8");
      let idx: number;
      while ((idx = this.buf.indexOf("\n")) >= 0) {
        const line = this.buf.slice(0, idx);
        this.buf = this.buf.slice(idx + 1);
        const waiter = this.waiters.shift();
        if (waiter) waiter(line);
        else this.pending.push(line);
      }
    });
    const finish = () => {
      this.closed = true;
      for (const w of this.waiters.splice(0)) w(null);
    };
    input.on("end", finish);
    input.on("close", finish);
    input.on("error", finish);
  }

  send(msg: object): void {
    this.output.write(JSON.stringify(msg) + "\n");
  }

  /** Next message, or null when the peer is gone. */
  recv(timeoutMs = 30000): Promise<Record<string, unknown> | null> {
    return new Promise((resolve, reject) => {
      const deliver = (line: string | null) => {
        clearTimeout(timer);
        if (line === null) return resolve(null);
        try {
          resolve(JSON.parse(line));
        } catch {
          reject(new ProtocolViolation("invalid JSON line from peer"));
        }
      };
      const timer = setTimeout(() => {
        const i = this.waiters.indexOf(deliver);
        if (i >= 0) this.waiters.splice(i, 1);
        reject(new ProtocolViolation(`no message within ${timeoutMs} ms`));
      }, timeoutMs);
      const queued = this.pending.shift();
      if (queued !== undefined) return deliver(queued);
      if (this.closed) return deliver(null);
      this.waiters.push(deliver);
    });
  }
}

export function validateHello(msg: Record<string, unknown>): HelloMsg {
  if (msg.type !== "hello") {
    throw new ProtocolViolation(`type: expected 'hello', got ${JSON.stringify(msg.type)}`);
  }
  if (msg.b2dr_bridge_version !== BRIDGE_VERSION) {
    throw new ProtocolViolation(
      `b2dr_bridge_version: peer speaks ${JSON.stringify(msg.b2dr_bridge_version)}, need ${BRIDGE_VERSION}`,
    );
  }
  if (!Array.isArray(msg.rig) || msg.rig.length === 0) {
    throw new ProtocolViolation("rig: expected a non-empty camera list");
  }
  if (!Array.isArray(msg.resolution) || msg.resolution.length !== 2) {
    throw new ProtocolViolation("resolution: expected [width, height]");
  }
  return msg as unknown as HelloMsg;
}

export function validateRender(msg: Record<string, unknown>): RenderMsg {
  for (const field of ["tick", "seed", "cameras", "masks", "refs"]) {
    if (!(field in msg)) throw new ProtocolViolation(`${field}: missing field`);
  }
  const cameras = msg.cameras;
  if (!Array.isArray(cameras) || cameras.length === 0) {
    throw new ProtocolViolation("cameras: expected a non-empty list");
  }
  if (!Array.isArray(msg.masks) || msg.masks.length !== cameras.length) {
    throw new ProtocolViolation("masks: expected one mask stack per camera");
  }
  if (msg.prev != null && (!Array.isArray(msg.prev) || msg.prev.length !== cameras.length)) {
    throw new ProtocolViolation("prev: expected one image per camera");
  }
  return msg as unknown as RenderMsg;
}

export function frameMessage(tick: number, images: string[]): object {
  return { type: "frame", tick, images };
}

export function errorMessage(message: string): object {
  return { type: "error", message };
}

export function connectTcp(host: string, port: number): Promise<net.Socket> {
  return new Promise((resolve, reject) => {
    const sock = net.createConnection({ host, port }, () => resolve(sock));
    sock.on("error", reject);
  });
}
