"""Image codecs: 8-bit RGB PNGs for camera frames and a minimal APNG
(animated PNG) writer/reader used to ship binary mask stacks as one
multi-page file, one grayscale page per class channel.

The APNG codec is self-contained so that encoded bytes are deterministic
and external bridge clients can parse them with ~100 lines of code.
"""

from __future__ import annotations

import io
import struct
import zlib

import numpy as np
from PIL import Image

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Float [0, 1] (C, H, W) -> uint8 (H, W, C)."""
    arr = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    return np.rint(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    """uint8 (H, W, C) -> float [0, 1] (C, H, W)."""
    return arr.astype(float).transpose(2, 0, 1) / 255.0


def encode_png(img: np.ndarray) -> bytes:
    """Encode a float [0,1] (3, H, W) image as 8-bit RGB PNG bytes."""
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to float [0,1] (3, H, W)."""
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return from_uint8(np.asarray(img))


def save_png(img: np.ndarray, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))


def load_png(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_png(fh.read())


# ---------------------------------------------------------------------------
# minimal APNG for mask stacks


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_mask_apng(masks: np.ndarray) -> bytes:
    """Binary (C, H, W) stack -> one grayscale APNG page per channel."""
    masks = np.asarray(masks)
    if masks.ndim != 3:
        raise ValueError("mask stack must be (C, H, W)")
    C, H, W = masks.shape
    pages = (masks > 0).astype(np.uint8) * 255

    out = [PNG_SIGNATURE]
    # 8-bit grayscale, no interlace
    out.append(_chunk(b"IHDR", struct.pack(">IIBBBBB", W, H, 8, 0, 0, 0, 0)))
    out.append(_chunk(b"acTL", struct.pack(">II", C, 0)))
    seq = 0
    for i in range(C):
        fctl = struct.pack(
            ">IIIIIHHBB", seq, W, H, 0, 0, 1, 1, 0, 0
        )  # full-frame page, 1s delay, dispose/blend none
        out.append(_chunk(b"fcTL", fctl))
        seq += 1
        raw = b"".join(b"\x00" + pages[i, r].tobytes() for r in range(H))
        compressed = zlib.compress(raw, 9)
        if i == 0:
            out.append(_chunk(b"IDAT", compressed))
        else:
            out.append(_chunk(b"fdAT", struct.pack(">I", seq) + compressed))
            seq += 1
    out.append(_chunk(b"IEND", b""))
    return b"".join(out)


def _iter_chunks(data: bytes):
    if data[:8] != PNG_SIGNATURE:
        raise ValueError("not a PNG stream")
    pos = 8
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        yield tag, payload
        pos += 12 + length


def decode_mask_apng(data: bytes) -> np.ndarray:
    """Inverse of encode_mask_apng; returns uint8 (C, H, W) in {0, 1}."""
    W = H = n_pages = None
    streams: list[bytes] = []
    for tag, payload in _iter_chunks(data):
        if tag == b"IHDR":
            W, H, depth, color = struct.unpack(">IIBB", payload[:10])
            if depth != 8 or color != 0:
                raise ValueError("mask APNG must be 8-bit grayscale")
        elif tag == b"acTL":
            n_pages = struct.unpack(">II", payload)[0]
        elif tag == b"fcTL":
            streams.append(b"")
        elif tag == b"IDAT":
            streams[-1] += payload
        elif tag == b"fdAT":
            streams[-1] += payload[4:]
    if W is None or n_pages is None or len(streams) != n_pages:
        raise ValueError("malformed mask APNG")
    pages = []
    for s in streams:
        raw = zlib.decompress(s)
        rows = []
        stride = W + 1
        for r in range(H):
            line = raw[r * stride : (r + 1) * stride]
            if line[0] != 0:
                raise ValueError("unsupported PNG filter in mask APNG")
            rows.append(np.frombuffer(line[1:], dtype=np.uint8))
        pages.append(np.stack(rows))
    return (np.stack(pages) > 0).astype(np.uint8)


def save_mask_apng(masks: np.ndarray, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_mask_apng(masks))


def load_mask_apng(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_mask_apng(fh.read())
