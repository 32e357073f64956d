/** Decoder for the simulator's mask stacks: minimal APNG, one full 8-bit
 * grayscale page per class channel, filter 0 rows, zlib streams in IDAT /
 * fdAT chunks. Kept dependency-free so the wire format stays inspectable.
 */

import * as zlib from "node:zlib";

const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

export interface MaskStack {
  width: number;
  height: number;
  /** One binary page (0/1 bytes, length width*height) per class channel. */
  pages: Uint8Array[];
}

export function decodeMaskApng(data: Buffer): MaskStack {
  if (!data.subarray(0, 8).equals(PNG_SIGNATURE)) {
    throw new Error("mask stack: not a PNG stream");
  }
  let width = 0;
  let height = 0;
  let expectedPages = 0;
  const streams: Buffer[][] = [];

  let pos = 8;
  while (pos + 12 <= data.length) {
    const length = data.readUInt32BE(pos);
    const tag = data.toString("ascii", pos + 4, pos + 8);
    const payload = data.subarray(pos + 8, pos + 8 + length);
    pos += 12 + length;

    if (tag === "IHDR") {
      width = payload.readUInt32BE(0);
      height = payload.readUInt32BE(4);
      const depth = payload[8];
      const color = payload[9];
      if (depth !== 8 || color !== 0) {
        throw new Error("mask stack: expected 8-bit grayscale pages");
      }
    } else if (tag === "acTL") {
      expectedPages = payload.readUInt32BE(0);
    } else if (tag === "fcTL") {
      streams.push([]);
    } else if (tag === "IDAT") {
      streams[streams.length - 1].push(Buffer.from(payload));
    } else if (tag === "fdAT") {
      streams[streams.length - 1].push(Buffer.from(payload.subarray(4)));
    } else if (tag === "IEND") {
      break;
    }
  }

  if (!width || streams.length !== expectedPages) {
    throw new Error("mask stack: malformed APNG page table");
  }

  const pages = streams.map((chunks) => {
    const raw = zlib.inflateSync(Buffer.concat(chunks));
    const stride = width + 1;
    const page = new Uint8Array(width * height);
    for (let row = 0; row < height; row++) {
      if (raw[row * stride] !== 0) {
        throw new Error("mask stack: unsupported PNG row filter");
      }
      for (let col = 0; col < width; col++) {
        page[row * width + col] = raw[row * stride + 1 + col] > 0 ? 1 : 0;
      }
    }
    return page;
  });

  return { width, height, pages };
}

export function decodeMaskApngBase64(b64: string): MaskStack {
  return decodeMaskApng(Buffer.from(b64, "base64"));
}
