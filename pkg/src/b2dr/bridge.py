"""Wire bridge to an out-of-process renderer.

Transport is newline-delimited JSON over TCP or a spawned child's stdio.
The simulator drives the exchange: one `hello` / `hello_ack` handshake per
session, then `render` -> `frame` pairs (or `error`). Images travel as
base64 PNG, mask stacks as base64 multi-page (animated) PNG.
"""

from __future__ import annotations

import base64
import json
import select
import socket
import subprocess
import time

import numpy as np

from . import imgio
from .render import RenderRequest
from .scenario import CameraRig, make_camera

BRIDGE_VERSION = 1
DEFAULT_TIMEOUT_S = 10.0


class ProtocolError(RuntimeError):
    """Malformed or out-of-order bridge message; names the offending field."""


class BridgeTimeout(RuntimeError):
    pass


def _b64_png(img: np.ndarray) -> str:
    return base64.b64encode(imgio.encode_png(img)).decode("ascii")


def _png_b64(data: str, where: str) -> np.ndarray:
    try:
        return imgio.decode_png(base64.b64decode(data))
    except Exception as e:
        raise ProtocolError(f"{where}: bad PNG payload ({e})") from e


def rig_to_wire(rig: CameraRig) -> list[dict]:
    return [
        {
            "name": c.name,
            "fx": c.fx,
            "fy": c.fy,
            "cx": c.cx,
            "cy": c.cy,
            "width": c.width,
            "height": c.height,
            "ego_to_camera": [list(r) for r in c.ego_to_camera],
        }
        for c in rig.cameras
    ]


def rig_from_wire(data, where: str = "hello.rig") -> CameraRig:
    if not isinstance(data, list) or not data:
        raise ProtocolError(f"{where}: expected non-empty camera list")
    cams = []
    for i, c in enumerate(data):
        try:
            cams.append(
                make_camera(
                    name=str(c["name"]),
                    fx=float(c["fx"]),
                    fy=float(c["fy"]),
                    cx=float(c["cx"]),
                    cy=float(c["cy"]),
                    width=int(c["width"]),
                    height=int(c["height"]),
                    ego_to_camera=tuple(tuple(float(v) for v in row) for row in c["ego_to_camera"]),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"{where}[{i}]: {e}") from e
    return CameraRig(tuple(cams))


def hello_message(rig: CameraRig, resolution: tuple[int, int]) -> dict:
    return {
        "type": "hello",
        "b2dr_bridge_version": BRIDGE_VERSION,
        "rig": rig_to_wire(rig),
        "resolution": list(resolution),
    }


def render_message(req: RenderRequest) -> dict:
    names = req.rig.names()
    world = req.world
    msg = {
        "type": "render",
        "tick": world.tick,
        "seed": req.seed,
        "cameras": list(names),
        "masks": [
            base64.b64encode(imgio.encode_mask_apng(req.masks[n])).decode("ascii")
            for n in names
        ],
        "prev": (
            [_b64_png(req.prev_images[n]) for n in names]
            if req.prev_images is not None
            else None
        ),
        "prev_noise_level": req.prev_noise_level,
        "refs": [
            [
                {
                    "image": _b64_png(ref.images[n]),
                    "pose": {"x": ref.pose.x, "y": ref.pose.y, "heading": ref.pose.heading},
                    "offset": ref.pose.offset,
                    "side": ref.side,
                }
                for ref in req.refs()
                if n in ref.images
            ]
            for n in names
        ],
        "ego_pose": {
            "x": world.ego.position[0],
            "y": world.ego.position[1],
            "heading": world.ego.heading,
        },
        "boxes": [
            {
                "id": a.id,
                "center": list(a.center),
                "dims": list(a.dims),
                "yaw": a.yaw,
                "class_id": a.class_id,
            }
            for a in world.agents
        ],
        "map": [
            {"kind": m.kind, "class_id": m.class_id, "vertices": [list(v) for v in m.vertices]}
            for m in world.map_elements
        ],
    }
    return msg


def parse_frame(msg: dict, n_cameras: int, tick: int) -> list[np.ndarray]:
    if msg.get("type") == "error":
        raise ProtocolError(f"renderer error: {msg.get('message', '<no message>')}")
    if msg.get("type") != "frame":
        raise ProtocolError(f"type: expected 'frame', got {msg.get('type')!r}")
    if msg.get("tick") != tick:
        raise ProtocolError(f"tick: expected {tick}, got {msg.get('tick')!r}")
    images = msg.get("images")
    if not isinstance(images, list) or len(images) != n_cameras:
        raise ProtocolError(f"images: expected list of {n_cameras} PNGs")
    return [_png_b64(p, f"images[{i}]") for i, p in enumerate(images)]


class LineChannel:
    """Newline-delimited JSON over a byte stream with a deadline."""

    def __init__(self, recv_fn, send_fn, close_fn):
        self._recv = recv_fn
        self._send = send_fn
        self._close = close_fn
        self._buf = b""

    def send(self, msg: dict) -> None:
        self._send(json.dumps(msg, separators=(",", ":")).encode() + b"\n")

    def recv(self, timeout_s: float) -> dict:
        deadline = time.monotonic() + timeout_s
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BridgeTimeout(f"renderer timeout after {timeout_s:.1f}s")
            chunk = self._recv(remaining)
            if not chunk:
                raise ProtocolError("connection closed by peer")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"invalid JSON line: {e.msg}") from e
        if not isinstance(msg, dict) or "type" not in msg:
            raise ProtocolError("type: missing message type")
        return msg

    def close(self) -> None:
        self._close()


def _socket_channel(sock: socket.socket) -> LineChannel:
    def recv(timeout_s: float) -> bytes:
        sock.settimeout(timeout_s)
        try:
            return sock.recv(65536)
        except socket.timeout as e:
            raise BridgeTimeout("renderer timeout") from e

    return LineChannel(recv, sock.sendall, sock.close)


class BridgeSession:
    """Simulator side of one renderer connection."""

    def __init__(self, channel: LineChannel, rig: CameraRig, resolution, timeout_s: float):
        self.channel = channel
        self.rig = rig
        self.resolution = tuple(resolution)
        self.timeout_s = timeout_s
        self._shook = False

    def handshake(self) -> None:
        self.channel.send(hello_message(self.rig, self.resolution))
        ack = self.channel.recv(self.timeout_s)
        if ack.get("type") != "hello_ack":
            raise ProtocolError(f"type: expected 'hello_ack', got {ack.get('type')!r}")
        if ack.get("b2dr_bridge_version") != BRIDGE_VERSION:
            raise ProtocolError(
                f"b2dr_bridge_version: peer speaks {ack.get('b2dr_bridge_version')!r}, "
                f"need {BRIDGE_VERSION}"
            )
        self._shook = True

    def render(self, req: RenderRequest) -> dict:
        if not self._shook:
            raise ProtocolError("render before handshake")
        self.channel.send(render_message(req))
        reply = self.channel.recv(self.timeout_s)
        images = parse_frame(reply, len(self.rig.cameras), req.world.tick)
        return {cam.name: img for cam, img in zip(self.rig.cameras, images)}

    def close(self) -> None:
        self.channel.close()


def open_session(config: dict) -> BridgeSession:
    """Create and handshake a renderer session.

    Config keys: mode = connect | listen | spawn, host/port for TCP modes,
    command (argv list) for spawn, rig + resolution context, timeout_s.
    """
    mode = config.get("mode", "connect")
    timeout_s = float(config.get("timeout_s", DEFAULT_TIMEOUT_S))
    rig = config["rig"]
    resolution = config.get("resolution", (400, 224))

    if mode == "connect":
        sock = socket.create_connection(
            (config.get("host", "127.0.0.1"), int(config["port"])), timeout=timeout_s
        )
        channel = _socket_channel(sock)
    elif mode == "listen":
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((config.get("host", "127.0.0.1"), int(config.get("port", 0))))
        srv.listen(1)
        srv.settimeout(timeout_s)
        bound = srv.getsockname()
        notify = config.get("on_listening")
        if notify:
            notify(bound[0], bound[1])
        try:
            sock, _ = srv.accept()
        except socket.timeout as e:
            raise BridgeTimeout("no renderer attached before timeout") from e
        finally:
            srv.close()
        channel = _socket_channel(sock)
    elif mode == "spawn":
        proc = subprocess.Popen(
            list(config["command"]),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )

        def recv(timeout_s: float) -> bytes:
            ready, _, _ = select.select([proc.stdout], [], [], timeout_s)
            if not ready:
                raise BridgeTimeout("renderer timeout")
            return proc.stdout.read1(65536)

        def send(data: bytes) -> None:
            proc.stdin.write(data)
            proc.stdin.flush()

        def close() -> None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            proc.wait(timeout=5)

        channel = LineChannel(recv, send, close)
    else:
        raise ValueError(f"unknown bridge mode {mode!r}")

    session = BridgeSession(channel, rig, resolution, timeout_s)
    try:
        session.handshake()
    except Exception:
        session.close()
        raise
    return session


# ---------------------------------------------------------------------------
# renderer-side helpers (used by tests and reference clients)


def parse_render(msg: dict) -> dict:
    """Validate a render message and decode payloads renderer-side."""
    for key in ("tick", "seed", "cameras", "masks", "refs"):
        if key not in msg:
            raise ProtocolError(f"{key}: missing field")
    cameras = msg["cameras"]
    masks = [imgio.decode_mask_apng(base64.b64decode(m)) for m in msg["masks"]]
    prev = None
    if msg.get("prev") is not None:
        prev = [_png_b64(p, f"prev[{i}]") for i, p in enumerate(msg["prev"])]
    refs = [
        [
            {
                "image": _png_b64(r["image"], "refs.image"),
                "pose": r["pose"],
                "side": r.get("side"),
            }
            for r in per_cam
        ]
        for per_cam in msg["refs"]
    ]
    return {
        "tick": msg["tick"],
        "seed": msg["seed"],
        "cameras": cameras,
        "masks": masks,
        "prev": prev,
        "prev_noise_level": msg.get("prev_noise_level"),
        "refs": refs,
    }


def frame_message(tick: int, images: list[np.ndarray]) -> dict:
    return {"type": "frame", "tick": tick, "images": [_b64_png(i) for i in images]}


def error_message(message: str) -> dict:
    return {"type": "error", "message": message}
