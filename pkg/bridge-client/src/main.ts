#!/usr/bin/env node
/** CLI: `serve-stub --host H --port P --mode identity|palette` attaches a
 * stub renderer to a listening simulator; `probe --host H --port P` checks
 * the handshake and prints the negotiated session.
 */

import { parseArgs } from "node:util";

import { probe, serveStub, type StubMode } from "./stub.js";

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  const { values } = parseArgs({
    args: rest,
    options: {
      host: { type: "string", default: "127.0.0.1" },
      port: { type: "string" },
      mode: { type: "string", default: "identity" },
      quiet: { type: "boolean", default: false },
    },
  });
  const host = values.host as string;
  const port = Number(values.port);
  if (!Number.isFinite(port) || port <= 0) {
    console.error("error: --port is required");
    return 1;
  }

  if (command === "serve-stub") {
    const mode = values.mode as StubMode;
    if (mode !== "identity" && mode !== "palette") {
      console.error(`error: unknown mode '${values.mode}'`);
      return 1;
    }
    const log = values.quiet ? () => {} : (line: string) => console.error(line);
    const report = await serveStub(host, port, mode, log);
    console.log(`served ${report.framesServed} frames`);
    return 0;
  }

  if (command === "probe") {
    try {
      const report = await probe(host, port);
      console.log(
        `bridge version ${report.version}; cameras: ${report.cameras.join(", ")}; ` +
          `resolution ${report.resolution.join("x")}`,
      );
      return 0;
    } catch (err: unknown) {
      const msg = String(err);
      if (msg.includes("b2dr_bridge_version")) {
        console.error(`version mismatch: ${msg}`);
        return 3;
      }
      console.error(`connection failed: ${msg}`);
      return 2;
    }
  }

  console.error("usage: b2dr-bridge-client serve-stub|probe --host H --port P [--mode identity|palette]");
  return 1;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(String(err));
    process.exit(2);
  },
);
