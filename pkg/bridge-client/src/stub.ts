/** Stub renderers demonstrating how an external model plugs into the
 * simulator.
 *
 * identity: echoes the previous-frame images verbatim (gray when absent) -
 * a lossless passthrough proving transport fidelity.
 *
 * palette: repaints each mask channel in a fixed per-class color over the
 * previous image - a minimal re-implementation of the simulator's oracle
 * compositing pass, proving the render payload carries everything a real
 * renderer needs.
 */

import { decodeMaskApngBase64 } from "./apng.js";
import { decodePngBase64, encodePngBase64, solidGray, type RgbImage } from "./png.js";
import {
  BRIDGE_VERSION,
  LineChannel,
  ProtocolViolation,
  connectTcp,
  errorMessage,
  frameMessage,
  validateHello,
  validateRender,
  type HelloMsg,
  type RenderMsg,
} from "./protocol.js";

export type StubMode = "identity" | "palette";

/** Matches the simulator's flat-shade palette (after its float-to-uint8
 * rounding), channel order box classes then map classes. */
export const PALETTE: Array<[number, number, number]> = [
  [230, 64, 51],
  [51, 140, 242],
  [242, 204, 38],
  [153, 76, 204],
  [76, 191, 89],
  [242, 128, 26],
  [38, 204, 204],
  [217, 89, 153],
  [140, 140, 140],
];

export function renderOnce(msg: RenderMsg, mode: StubMode): string[] {
  const [width, height] = inferSize(msg);
  return msg.cameras.map((_, idx) => {
    const prev: RgbImage =
      msg.prev != null ? decodePngBase64(msg.prev[idx]) : solidGray(width, height);
    if (mode === "identity") {
      return msg.prev != null ? msg.prev[idx] : encodePngBase64(prev);
    }
    const stack = decodeMaskApngBase64(msg.masks[idx]);
    if (stack.width !== prev.width || stack.height !== prev.height) {
      throw new ProtocolViolation("masks: mask stack size differs from prev image");
    }
    const out: RgbImage = { width: prev.width, height: prev.height, rgb: prev.rgb.slice() };
    stack.pages.forEach((page, channel) => {
      const [r, g, b] = PALETTE[channel % PALETTE.length];
      for (let i = 0; i < page.length; i++) {
        if (page[i]) {
          out.rgb[3 * i] = r;
          out.rgb[3 * i + 1] = g;
          out.rgb[3 * i + 2] = b;
        }
      }
    });
    return encodePngBase64(out);
  });
}

function inferSize(msg: RenderMsg): [number, number] {
  const stack = decodeMaskApngBase64(msg.masks[0]);
  return [stack.width, stack.height];
}

export interface StubReport {
  hello: HelloMsg;
  framesServed: number;
}

/** Attach to a listening simulator and serve until it closes the session. */
export async function serveStub(
  host: string,
  port: number,
  mode: StubMode,
  log: (line: string) => void = () => {},
): Promise<StubReport> {
  const sock = await connectTcp(host, port);
  sock.setNoDelay(true);
  const channel = new LineChannel(sock, sock);

  const first = await channel.recv();
  if (first === null) throw new ProtocolViolation("peer closed before hello");
  let hello: HelloMsg;
  try {
    hello = validateHello(first);
  } catch (err) {
    channel.send(errorMessage(String(err)));
    sock.destroy();
    throw err;
  }
  channel.send({ type: "hello_ack", b2dr_bridge_version: BRIDGE_VERSION });
  log(`session open: ${hello.rig.length} cameras at ${hello.resolution.join("x")}`);

  let framesServed = 0;
  for (;;) {
    const msg = await channel.recv(120000).catch(() => null);
    if (msg === null) break;
    try {
      const render = validateRender(msg);
      channel.send(frameMessage(render.tick, renderOnce(render, mode)));
      framesServed++;
      log(`tick ${render.tick} served`);
    } catch (err) {
      // protocol violation: report and close
      channel.send(errorMessage(String(err)));
      sock.destroy();
      throw err;
    }
  }
  sock.destroy();
  return { hello, framesServed };
}

export interface ProbeReport {
  version: number;
  cameras: string[];
  resolution: [number, number];
}

/** Perform the hello exchange, report the negotiated session, and leave. */
export async function probe(host: string, port: number): Promise<ProbeReport> {
  const sock = await connectTcp(host, port); // connection refusal surfaces here
  const channel = new LineChannel(sock, sock);
  try {
    const first = await channel.recv(10000);
    if (first === null) throw new ProtocolViolation("peer closed before hello");
    const hello = validateHello(first); // version mismatch surfaces here
    channel.send({ type: "hello_ack", b2dr_bridge_version: BRIDGE_VERSION });
    return {
      version: hello.b2dr_bridge_version,
      cameras: hello.rig.map((c) => c.name),
      resolution: hello.resolution,
    };
  } finally {
    sock.destroy();
  }
}
