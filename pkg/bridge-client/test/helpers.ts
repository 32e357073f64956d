import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

export const PYTHON = process.env.B2DR_PYTHON ?? "python3";

export function makeFixtures(): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "b2dr-fixtures-"));
  const res = spawnSync(PYTHON, ["-m", "b2dr.fixtures", dir], { encoding: "utf-8" });
  if (res.status !== 0) {
    throw new Error(`fixture generation failed: ${res.stderr}`);
  }
  return dir;
}

export function tmpdir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

export interface BridgeServe {
  proc: ChildProcess;
  host: string;
  port: number;
  outDir: string;
  exit: Promise<number>;
  stderr: () => string;
}

/** Launch `b2dr bridge-serve` and resolve once it reports its port. */
export function startBridgeServe(
  scenario: string,
  opts: { seed?: number; timeout?: number; agent?: string } = {},
): Promise<BridgeServe> {
  const outDir = tmpdir("b2dr-serve-");
  const args = [
    "-m",
    "b2dr.cli",
    "bridge-serve",
    "--scenario",
    scenario,
    "--agent",
    opts.agent ?? "log-replay",
    "--seed",
    String(opts.seed ?? 0),
    "--port",
    "0",
    "--timeout",
    String(opts.timeout ?? 30),
    "--out",
    outDir,
  ];
  const proc = spawn(PYTHON, args, { stdio: ["ignore", "pipe", "pipe"] });
  let errBuf = "";
  proc.stderr!.on("data", (d: Buffer) => (errBuf += d.toString()));
  const exit = new Promise<number>((resolve) => proc.on("exit", (code) => resolve(code ?? -1)));

  return new Promise((resolve, reject) => {
    let outBuf = "";
    const onData = (d: Buffer) => {
      outBuf += d.toString();
      const m = outBuf.match(/listening on ([\d.]+):(\d+)/);
      if (m) {
        proc.stdout!.off("data", onData);
        resolve({
          proc,
          host: m[1],
          port: Number(m[2]),
          outDir,
          exit,
          stderr: () => errBuf,
        });
      }
    };
    proc.stdout!.on("data", onData);
    proc.on("exit", (code) => reject(new Error(`bridge-serve exited early (${code}): ${errBuf}`)));
  });
}

export function runCli(args: string[]): { status: number; stdout: string; stderr: string } {
  const res = spawnSync(PYTHON, ["-m", "b2dr.cli", ...args], { encoding: "utf-8" });
  return { status: res.status ?? -1, stdout: res.stdout, stderr: res.stderr };
}
