import * as net from "node:net";
import { afterEach, describe, expect, it } from "vitest";

import { serveStub, probe } from "../src/stub.js";
import { BRIDGE_VERSION } from "../src/protocol.js";

type Exchange = (socket: net.Socket, lines: AsyncGenerator<string>) => Promise<void>;

const servers: net.Server[] = [];

afterEach(() => {
  for (const s of servers.splice(0)) s.close();
});

/** Tiny in-test "simulator": scripted message exchange over one socket. */
function mockSimulator(exchange: Exchange): Promise<number> {
  return new Promise((resolve) => {
    const server = net.createServer(async (socket) => {
      async function* lines() {
        let buf = "";
        for await (const chunk of socket) {
          buf += chunk.toString();
          let idx;
          while ((idx = buf.indexOf("\n")) >= 0) {
            yield buf.slice(0, idx);
            buf = buf.slice(idx + 1);
          }
        }
      }
      await exchange(socket, lines());
    });
    servers.push(server);
    server.listen(0, "127.0.0.1", () => {
      resolve((server.address() as net.AddressInfo).port);
    });
  });
}

const HELLO = {
  type: "hello",
  b2dr_bridge_version: BRIDGE_VERSION,
  rig: [
    {
      name: "front",
      fx: 260,
      fy: 260,
      cx: 200,
      cy: 112,
      width: 400,
      height: 224,
      ego_to_camera: [
        [0, -1, 0, 0],
        [0, 0, -1, 1.6],
        [1, 0, 0, -1.2],
        [0, 0, 0, 1],
      ],
    },
  ],
  resolution: [400, 224],
};

function send(socket: net.Socket, msg: object) {
  socket.write(JSON.stringify(msg) + "\n");
}

describe("handshake", () => {
  it("probe reports the negotiated session", async () => {
    const port = await mockSimulator(async (socket, lines) => {
      send(socket, HELLO);
      const ack = JSON.parse((await lines.next()).value);
      expect(ack.type).toBe("hello_ack");
      expect(ack.b2dr_bridge_version).toBe(BRIDGE_VERSION);
    });
    const report = await probe("127.0.0.1", port);
    expect(report.version).toBe(1);
    expect(report.cameras).toEqual(["front"]);
    expect(report.resolution).toEqual([400, 224]);
  });

  it("probe rejects a version mismatch distinctly", async () => {
    const port = await mockSimulator(async (socket) => {
      send(socket, { ...HELLO, b2dr_bridge_version: 99 });
    });
    await expect(probe("127.0.0.1", port)).rejects.toThrow(/b2dr_bridge_version/);
  });

  it("probe surfaces connection refusal", async () => {
    // grab a port and close it again so nothing listens there
    const srv = net.createServer();
    const port = await new Promise<number>((resolve) => {
      srv.listen(0, "127.0.0.1", () => resolve((srv.address() as net.AddressInfo).port));
    });
    await new Promise((r) => srv.close(r));
    await expect(probe("127.0.0.1", port)).rejects.toThrow();
  });
});

describe("render exchange", () => {
  it("answers a malformed render with an error naming the field", async () => {
    let reply: Record<string, unknown> | undefined;
    const done = new Promise<void>((resolve) => {
      mockSimulator(async (socket, lines) => {
        send(socket, HELLO);
        await lines.next(); // hello_ack
        send(socket, { type: "render", tick: 0, seed: 1, cameras: ["front"], refs: [[]] });
        reply = JSON.parse((await lines.next()).value);
        socket.destroy();
        resolve();
      }).then((port) =>
        serveStub("127.0.0.1", port, "identity").catch(() => {
          /* stub closes after protocol violation */
        }),
      );
    });
    await done;
    expect(reply).toBeDefined();
    expect(reply!.type).toBe("error");
    expect(String(reply!.message)).toMatch(/masks/);
  });
});
