"""Procedural demo scenarios with synthetic camera recordings.

Recorded images are pure functions of the recorded pose: a smooth colored
ground pattern ray-cast through the rig camera plus a sky gradient, so
ground-plane warping between recorded frames is geometrically consistent.
Everything is deterministic; no randomness is involved.

Run `python -m b2dr.fixtures OUT_DIR` to materialize the shipped set.
"""

from __future__ import annotations

import math
import os
import sys

import numpy as np

from . import imgio
from .scenario import (
    AgentBox,
    Camera,
    CameraRig,
    MapElement,
    RecordedFrame,
    ScenarioLog,
    make_camera,
    save_scenario,
    to_mat4,
    wrap_angle,
)

BOX_CLASSES = ("vehicle", "pedestrian", "barrier", "cone")
MAP_CLASSES = ("drivable_area", "lane_divider", "crosswalk", "stop_line", "road_edge")

CAM_BASE = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def rig_camera(
    name: str,
    yaw: float = 0.0,
    mount=(1.2, 0.0, 1.6),
    fx: float = 260.0,
    fy: float = 260.0,
    width: int = 400,
    height: int = 224,
) -> Camera:
    """Forward-ish pinhole camera; yaw rotates the view left of straight ahead."""
    c, s = math.cos(-yaw), math.sin(-yaw)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    R = CAM_BASE @ rz
    t = -R @ np.asarray(mount, dtype=float)
    ext = np.eye(4)
    ext[:3, :3] = R
    ext[:3, 3] = t
    return make_camera(
        name=name,
        fx=fx,
        fy=fy,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
        ego_to_camera=to_mat4(ext),
    )


def ground_color(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Smooth deterministic ground texture in global coordinates, (3, ...)."""
    r = 0.45 + 0.20 * np.sin(0.15 * gx) * np.cos(0.21 * gy)
    g = 0.42 + 0.20 * np.sin(0.13 * gx + 1.0) * np.cos(0.17 * gy + 0.5)
    b = 0.40 + 0.15 * np.cos(0.11 * gx) * np.sin(0.19 * gy)
    return np.clip(np.stack([r, g, b]), 0.0, 1.0)


def synth_view(camera: Camera, coord, heading: float) -> np.ndarray:
    """Ray-cast the ground pattern from a recorded pose, sky above horizon."""
    H, W = camera.height, camera.width
    K_inv = np.linalg.inv(camera.k_matrix())
    us, vs = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    hom = np.stack([us, vs, np.ones_like(us), np.ones_like(us)], axis=-1)
    pts = (hom @ K_inv.T)[..., :3]  # depth-1 points, ego frame
    ext = camera.extrinsic_matrix()
    center = -np.linalg.inv(ext[:3, :3]) @ ext[:3, 3]
    dirs = pts - center
    dz = dirs[..., 2]
    t_hit = -center[2] / np.where(np.abs(dz) < 1e-9, -1e-9, dz)
    valid = (t_hit > 0.0) & (dz < 0.0)
    ground = center + dirs * t_hit[..., None]
    c, s = math.cos(heading), math.sin(heading)
    gx = coord[0] + c * ground[..., 0] - s * ground[..., 1]
    gy = coord[1] + s * ground[..., 0] + c * ground[..., 1]

    img = np.empty((3, H, W))
    t = (vs / max(H - 1, 1))[None]
    sky = np.array([0.55, 0.70, 0.92])[:, None, None]
    hor = np.array([0.75, 0.78, 0.85])[:, None, None]
    img[:] = sky * (1.0 - t) + hor * t
    colors = ground_color(gx, gy)
    img[:, valid] = colors[:, valid]
    return img


def _write_frames(
    root: str, name: str, rig: CameraRig, poses: list[tuple[tuple[float, float], float, float]]
) -> list[RecordedFrame]:
    img_dir = os.path.join(root, f"{name}_frames")
    os.makedirs(img_dir, exist_ok=True)
    frames = []
    for i, (coord, heading, time) in enumerate(poses):
        refs = []
        for cam in rig.cameras:
            rel = os.path.join(f"{name}_frames", f"{cam.name}_{i:04d}.png")
            imgio.save_png(synth_view(cam, coord, heading), os.path.join(root, rel))
            refs.append(rel)
        frames.append(
            RecordedFrame(coord=coord, heading=wrap_angle(heading), time=time, image_refs=tuple(refs))
        )
    return frames


def _corridor_polygon(route, half_width: float, extend: float = 10.0) -> tuple:
    """Rectangle-ish hull around a route polyline (left side out, right back)."""
    route = list(route)
    if extend > 0.0 and len(route) >= 2:
        dx0 = route[0][0] - route[1][0]
        dy0 = route[0][1] - route[1][1]
        n0 = math.hypot(dx0, dy0) or 1.0
        route.insert(0, (route[0][0] + dx0 / n0 * extend, route[0][1] + dy0 / n0 * extend))
        dx1 = route[-1][0] - route[-2][0]
        dy1 = route[-1][1] - route[-2][1]
        n1 = math.hypot(dx1, dy1) or 1.0
        route.append((route[-1][0] + dx1 / n1 * extend, route[-1][1] + dy1 / n1 * extend))
    left = []
    right = []
    for i, (x, y) in enumerate(route):
        if i + 1 < len(route):
            dx = route[i + 1][0] - x
            dy = route[i + 1][1] - y
        else:
            dx = x - route[i - 1][0]
            dy = y - route[i - 1][1]
        n = math.hypot(dx, dy) or 1.0
        nx, ny = -dy / n, dx / n
        left.append((x + nx * half_width, y + ny * half_width))
        right.append((x - nx * half_width, y - ny * half_width))
    return tuple(left + right[::-1])


def make_straight_scenario(
    root: str,
    name: str = "straight",
    n_frames: int = 13,
    speed: float = 8.0,
    frame_dt: float = 0.5,
    extra_cameras: bool = False,
    with_traffic: bool = False,
) -> str:
    """Constant-speed straight drive along +x. Returns the scenario path."""
    cams = [rig_camera("front")]
    if extra_cameras:
        cams.append(rig_camera("front_left", yaw=0.6, mount=(1.0, 0.4, 1.6)))
        cams.append(rig_camera("front_right", yaw=-0.6, mount=(1.0, -0.4, 1.6)))
    rig = CameraRig(tuple(cams))

    poses = [((speed * i * frame_dt, 0.0), 0.0, i * frame_dt) for i in range(n_frames)]
    frames = _write_frames(root, name, rig, poses)
    end_x = speed * (n_frames - 1) * frame_dt
    route = tuple((x, 0.0) for x, _ in (p[0] for p in poses))

    drivable = MapElement(
        vertices=(
            (-15.0, -8.0),
            (end_x + 15.0, -8.0),
            (end_x + 15.0, 8.0),
            (-15.0, 8.0),
        ),
        class_id=MAP_CLASSES.index("drivable_area"),
        kind="polygon",
    )
    dividers = tuple(
        MapElement(
            vertices=((-15.0, y), (end_x + 15.0, y)),
            class_id=MAP_CLASSES.index("lane_divider"),
            kind="linestring",
        )
        for y in (-2.0, 2.0)
    )
    edgeL = MapElement(
        vertices=((-15.0, 8.0), (end_x + 15.0, 8.0)),
        class_id=MAP_CLASSES.index("road_edge"),
        kind="linestring",
    )
    crosswalk = MapElement(
        vertices=(
            (end_x + 6.0, -6.0),
            (end_x + 9.0, -6.0),
            (end_x + 9.0, 6.0),
            (end_x + 6.0, 6.0),
        ),
        class_id=MAP_CLASSES.index("crosswalk"),
        kind="polygon",
    )

    agents = []
    if with_traffic:
        agents.append(
            AgentBox(
                id="lead_lane_left",
                center=(20.0, 4.0, 0.85),
                dims=(4.4, 1.8, 1.6),
                yaw=0.0,
                velocity=(7.0, 0.0),
                class_id=BOX_CLASSES.index("vehicle"),
                route=tuple((20.0 + 10.0 * k, 4.0) for k in range(40)),
                target_speed=7.0,
            )
        )
        agents.append(
            AgentBox(
                id="follower_lane_left",
                center=(-15.0, 4.0, 0.85),
                dims=(4.4, 1.8, 1.6),
                yaw=0.0,
                velocity=(7.0, 0.0),
                class_id=BOX_CLASSES.index("vehicle"),
                route=tuple((-15.0 + 10.0 * k, 4.0) for k in range(40)),
                target_speed=7.0,
            )
        )
        agents.append(
            AgentBox(
                id="parked",
                center=(30.0, -5.5, 0.85),
                dims=(4.4, 1.8, 1.6),
                yaw=0.0,
                velocity=(0.0, 0.0),
                class_id=BOX_CLASSES.index("vehicle"),
            )
        )
        agents.append(
            AgentBox(
                id="cone_row",
                center=(45.0, -3.2, 0.4),
                dims=(0.4, 0.4, 0.8),
                yaw=0.0,
                velocity=(0.0, 0.0),
                class_id=BOX_CLASSES.index("cone"),
            )
        )

    log = ScenarioLog(
        frames=tuple(frames),
        rig=rig,
        map_elements=(drivable,) + dividers + (edgeL, crosswalk),
        initial_agents=tuple(agents),
        ego_route=route,
        goal=route[-1],
        box_classes=BOX_CLASSES,
        map_classes=MAP_CLASSES,
        base_dir=root,
    )
    path = os.path.join(root, f"{name}.json")
    save_scenario(log, path)
    return path


def make_curve_scenario(
    root: str,
    name: str = "curve",
    n_frames: int = 13,
    speed: float = 6.0,
    radius: float = 60.0,
    frame_dt: float = 0.5,
) -> str:
    """Constant-speed arc (left turn) around a circle of the given radius."""
    rig = CameraRig((rig_camera("front"),))
    poses = []
    for i in range(n_frames):
        t = i * frame_dt
        phi = speed * t / radius  # angle swept along the arc
        x = radius * math.sin(phi)
        y = radius * (1.0 - math.cos(phi))
        poses.append(((x, y), phi, t))
    frames = _write_frames(root, name, rig, poses)
    route = tuple(p[0] for p in poses)

    drivable = MapElement(
        vertices=_corridor_polygon(route, 7.0),
        class_id=MAP_CLASSES.index("drivable_area"),
        kind="polygon",
    )
    divider = MapElement(
        vertices=_corridor_polygon(route, 2.0, extend=0.0)[: len(route)],
        class_id=MAP_CLASSES.index("lane_divider"),
        kind="linestring",
    )

    log = ScenarioLog(
        frames=tuple(frames),
        rig=rig,
        map_elements=(drivable, divider),
        initial_agents=(),
        ego_route=route,
        goal=route[-1],
        box_classes=BOX_CLASSES,
        map_classes=MAP_CLASSES,
        base_dir=root,
    )
    path = os.path.join(root, f"{name}.json")
    save_scenario(log, path)
    return path


def make_all(root: str) -> list[str]:
    os.makedirs(root, exist_ok=True)
    return [
        make_straight_scenario(root),
        make_straight_scenario(root, name="traffic", extra_cameras=True, with_traffic=True),
        make_curve_scenario(root),
    ]


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "scenarios"
    for p in make_all(out):
        print(p)
