/** Thin RGB helpers over pngjs. Images travel as 8-bit RGB PNG base64. */

import { PNG } from "pngjs";

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB triples, length = 3 * width * height. */
  rgb: Uint8Array;
}

export function decodePng(data: Buffer): RgbImage {
  const png = PNG.sync.read(data);
  const rgb = new Uint8Array(3 * png.width * png.height);
  for (let i = 0; i < png.width * png.height; i++) {
    rgb[3 * i] = png.data[4 * i];
    rgb[3 * i + 1] = png.data[4 * i + 1];
    rgb[3 * i + 2] = png.data[4 * i + 2];
  }
  return { width: png.width, height: png.height, rgb };
}

export function encodePng(img: RgbImage): Buffer {
  const png = new PNG({ width: img.width, height: img.height });
  for (let i = 0; i < img.width * img.height; i++) {
    png.data[4 * i] = img.rgb[3 * i];
    png.data[4 * i + 1] = img.rgb[3 * i + 1];
    png.data[4 * i + 2] = img.rgb[3 * i + 2];
    png.data[4 * i + 3] = 255;
  }
  return PNG.sync.write(png);
}

export function decodePngBase64(b64: string): RgbImage {
  return decodePng(Buffer.from(b64, "base64"));
}

export function encodePngBase64(img: RgbImage): string {
  return encodePng(img).toString("base64");
}

export function solidGray(width: number, height: number, value = 128): RgbImage {
  const rgb = new Uint8Array(3 * width * height).fill(value);
  return { width, height, rgb };
}
