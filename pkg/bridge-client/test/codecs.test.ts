import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { decodeMaskApng } from "../src/apng.js";
import { decodePng, encodePng, solidGray, type RgbImage } from "../src/png.js";
import { PYTHON, tmpdir } from "./helpers.js";

let dir: string;

beforeAll(() => {
  dir = tmpdir("b2dr-codec-");
  // cross-codec fixtures: the simulator writes a procedural RGB PNG and a
  // procedural mask stack that this side recomputes independently
  const script = `
import numpy as np
from b2dr import imgio
h, w = 13, 29
img = np.zeros((3, h, w))
for c in range(3):
    for y in range(h):
        for x in range(w):
            img[c, y, x] = ((x * 3 + y * 5 + c * 7) % 256) / 255.0
imgio.save_png(img, r"${"DIR"}/pattern.png")
masks = np.zeros((4, h, w), dtype=np.uint8)
for c in range(4):
    for y in range(h):
        for x in range(w):
            masks[c, y, x] = 1 if (x + y + c) % 7 == 0 else 0
imgio.save_mask_apng(masks, r"${"DIR"}/masks.png")
`.replaceAll("DIR", dir);
  const res = spawnSync(PYTHON, ["-c", script], { encoding: "utf-8" });
  if (res.status !== 0) throw new Error(res.stderr);
});

describe("png codec", () => {
  it("decodes simulator-written PNGs pixel-exactly", () => {
    const img = decodePng(fs.readFileSync(path.join(dir, "pattern.png")));
    expect(img.width).toBe(29);
    expect(img.height).toBe(13);
    for (let c = 0; c < 3; c++) {
      for (let y = 0; y < img.height; y++) {
        for (let x = 0; x < img.width; x++) {
          const want = (x * 3 + y * 5 + c * 7) % 256;
          expect(img.rgb[3 * (y * img.width + x) + c]).toBe(want);
        }
      }
    }
  });

  it("round-trips its own encoding", () => {
    const img: RgbImage = solidGray(7, 5, 0);
    for (let i = 0; i < img.rgb.length; i++) img.rgb[i] = (i * 31) % 256;
    const back = decodePng(encodePng(img));
    expect(back.width).toBe(7);
    expect(back.height).toBe(5);
    expect(Buffer.from(back.rgb).equals(Buffer.from(img.rgb))).toBe(true);
  });
});

describe("mask apng codec", () => {
  it("decodes simulator-written mask stacks", () => {
    const stack = decodeMaskApng(fs.readFileSync(path.join(dir, "masks.png")));
    expect(stack.pages.length).toBe(4);
    expect(stack.width).toBe(29);
    expect(stack.height).toBe(13);
    for (let c = 0; c < 4; c++) {
      for (let y = 0; y < 13; y++) {
        for (let x = 0; x < 29; x++) {
          const want = (x + y + c) % 7 === 0 ? 1 : 0;
          expect(stack.pages[c][y * 29 + x]).toBe(want);
        }
      }
    }
  });

  it("rejects non-png payloads", () => {
    expect(() => decodeMaskApng(Buffer.from("nonsense"))).toThrow(/not a PNG/);
  });
});
