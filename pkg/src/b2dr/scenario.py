"""World-state and scenario-log domain types, frame transforms, file I/O.

All angles are radians, lengths meters, times seconds. The world is planar:
agents and the ego move in (x, y, yaw); the z axis only matters for camera
geometry. Types are frozen dataclasses built from plain floats/tuples so
structural equality and JSON round-trips are exact.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .polyline import arc_length

SCENARIO_VERSION = 1

Vec2 = tuple[float, float]
Vec3 = tuple[float, float, float]
Mat3 = tuple[tuple[float, float, float], ...]
Mat4 = tuple[tuple[float, float, float, float], ...]

DEFAULT_EGO_DIMS: Vec3 = (4.6, 1.9, 1.7)


class ScenarioError(ValueError):
    """Scenario file failed to parse or violated an invariant."""


def wrap_angle(a: float) -> float:
    """Normalize to [-pi, pi); exact no-op for values already in range."""
    if -math.pi <= a < math.pi:
        return a
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class AgentBox:
    id: str
    center: Vec3
    dims: Vec3  # length, width, height
    yaw: float
    velocity: Vec2
    class_id: int
    route: tuple[Vec2, ...] = ()
    target_speed: float | None = None

    @property
    def dynamic(self) -> bool:
        return len(self.route) >= 2

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class MapElement:
    vertices: tuple[Vec2, ...]
    class_id: int
    kind: str  # "polygon" | "linestring"


@dataclass(frozen=True)
class EgoState:
    position: Vec2
    heading: float
    velocity: float  # signed longitudinal, m/s
    acceleration: float
    steering_angle: float
    ego_to_global: Mat3
    time: float

    def global_matrix(self) -> np.ndarray:
        return np.array(self.ego_to_global, dtype=float)


def pose_matrix(position: Vec2, heading: float) -> Mat3:
    c, s = math.cos(heading), math.sin(heading)
    x, y = position
    return ((c, -s, x), (s, c, y), (0.0, 0.0, 1.0))


def make_ego_state(
    position: Vec2,
    heading: float,
    velocity: float = 0.0,
    acceleration: float = 0.0,
    steering_angle: float = 0.0,
    time: float = 0.0,
) -> EgoState:
    heading = wrap_angle(heading)
    return EgoState(
        position=(float(position[0]), float(position[1])),
        heading=heading,
        velocity=float(velocity),
        acceleration=float(acceleration),
        steering_angle=float(steering_angle),
        ego_to_global=pose_matrix(position, heading),
        time=float(time),
    )


@dataclass(frozen=True)
class Camera:
    name: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    ego_to_camera: Mat4
    K: Mat4  # combined intrinsic @ extrinsic, ego -> image-homogeneous

    def k_matrix(self) -> np.ndarray:
        return np.array(self.K, dtype=float)

    def extrinsic_matrix(self) -> np.ndarray:
        return np.array(self.ego_to_camera, dtype=float)

    def intrinsic_matrix(self) -> np.ndarray:
        return intrinsic_4x4(self.fx, self.fy, self.cx, self.cy)

    def scaled(self, width: int, height: int) -> "Camera":
        """Camera rendering to a different resolution (per-axis rescale)."""
        sx = width / self.width
        sy = height / self.height
        fx, fy = self.fx * sx, self.fy * sy
        cx, cy = self.cx * sx, self.cy * sy
        K = intrinsic_4x4(fx, fy, cx, cy) @ self.extrinsic_matrix()
        return replace(
            self,
            fx=fx,
            fy=fy,
            cx=cx,
            cy=cy,
            width=width,
            height=height,
            K=to_mat4(K),
        )


def intrinsic_4x4(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    return np.array(
        [
            [fx, 0.0, cx, 0.0],
            [0.0, fy, cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def to_mat4(m: np.ndarray) -> Mat4:
    return tuple(tuple(float(v) for v in row) for row in m)


def make_camera(
    name: str,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    width: int,
    height: int,
    ego_to_camera: Mat4,
    K: Mat4 | None = None,
) -> Camera:
    if K is None:
        K = to_mat4(intrinsic_4x4(fx, fy, cx, cy) @ np.array(ego_to_camera, dtype=float))
    return Camera(name, fx, fy, cx, cy, width, height, ego_to_camera, K)


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[Camera, ...]

    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.cameras)

    def by_name(self, name: str) -> Camera:
        for c in self.cameras:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class RecordedFrame:
    coord: Vec2
    heading: float
    time: float
    image_refs: tuple[str, ...]  # one relative PNG path per rig camera, rig order


@dataclass(frozen=True)
class ScenarioLog:
    frames: tuple[RecordedFrame, ...]
    rig: CameraRig
    map_elements: tuple[MapElement, ...]
    initial_agents: tuple[AgentBox, ...]
    ego_route: tuple[Vec2, ...]
    goal: Vec2
    box_classes: tuple[str, ...]
    map_classes: tuple[str, ...]
    ego_dims: Vec3 = DEFAULT_EGO_DIMS
    base_dir: str = field(default="", compare=False)

    def image_path(self, frame: RecordedFrame, cam_index: int) -> str:
        return os.path.join(self.base_dir, frame.image_refs[cam_index])


@dataclass(frozen=True)
class WorldState:
    ego: EgoState
    agents: tuple[AgentBox, ...]
    map_elements: tuple[MapElement, ...]
    tick: int
    ego_dims: Vec3 = DEFAULT_EGO_DIMS
    map_classes: tuple[str, ...] = ()


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple[Vec2, ...]  # ego frame at plan time, fixed spacing
    waypoint_dt: float
    plan_time: float

    @property
    def horizon(self) -> float:
        return len(self.waypoints) * self.waypoint_dt


# ---------------------------------------------------------------------------
# frame transforms


def global_to_ego(point, ego: EgoState):
    """Global point (2- or 3-vector) into the ego frame (x fwd, y left)."""
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    dx = point[0] - ego.position[0]
    dy = point[1] - ego.position[1]
    x = c * dx + s * dy
    y = -s * dx + c * dy
    if len(point) == 3:
        return (x, y, point[2])
    return (x, y)


def ego_to_global(point, ego: EgoState):
    """Inverse of global_to_ego."""
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    x = ego.position[0] + c * point[0] - s * point[1]
    y = ego.position[1] + s * point[0] + c * point[1]
    if len(point) == 3:
        return (x, y, point[2])
    return (x, y)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str

    def __str__(self) -> str:
        return f"{self.entity}: {self.rule}"


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(v) < 1e-12:
            return 0
        return 1 if v > 0 else -1

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12
        )

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, p3):
        return True
    if o2 == 0 and on_seg(p1, p2, p4):
        return True
    if o3 == 0 and on_seg(p3, p4, p1):
        return True
    if o4 == 0 and on_seg(p3, p4, p2):
        return True
    return False


def _polygon_is_simple(vertices) -> bool:
    n = len(vertices)
    segs = [(vertices[i], vertices[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            # adjacent segments share one endpoint by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(*segs[i], *segs[j]):
                return False
    return True


def validate_scenario(log: ScenarioLog) -> list[Violation]:
    """Check every type invariant; violations are data, not failures."""
    out: list[Violation] = []

    for a in log.initial_agents:
        ent = f"agent {a.id}"
        if not all(d > 0 for d in a.dims):
            out.append(Violation(ent, "dims must be strictly positive"))
        if not (-math.pi <= a.yaw < math.pi):
            out.append(Violation(ent, "yaw must lie in [-pi, pi)"))
        if not (0 <= a.class_id < len(log.box_classes)):
            out.append(Violation(ent, "class_id out of range"))
        if len(a.route) == 1:
            out.append(Violation(ent, "route needs >= 2 points when present"))

    ids = [a.id for a in log.initial_agents]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        out.append(Violation(f"agent {dup}", "duplicate agent id"))

    for i, m in enumerate(log.map_elements):
        ent = f"map element {i}"
        if m.kind not in ("polygon", "linestring"):
            out.append(Violation(ent, f"unknown kind {m.kind!r}"))
        if m.kind == "linestring" and len(m.vertices) < 2:
            out.append(Violation(ent, "linestring needs >= 2 vertices"))
        if m.kind == "polygon":
            if len(m.vertices) < 3:
                out.append(Violation(ent, "polygon needs >=3 vertices"))
            elif not _polygon_is_simple(m.vertices):
                out.append(Violation(ent, "polygon is self-intersecting"))
        if not (0 <= m.class_id < len(log.map_classes)):
            out.append(Violation(ent, "class_id out of range"))

    for cam in log.rig.cameras:
        ent = f"camera {cam.name}"
        if cam.fx <= 0 or cam.fy <= 0:
            out.append(Violation(ent, "focal lengths must be positive"))
        recomposed = cam.intrinsic_matrix() @ cam.extrinsic_matrix()
        if not np.allclose(recomposed, cam.k_matrix(), atol=1e-9, rtol=0.0):
            out.append(Violation(ent, "K is not intrinsic @ extrinsic"))
        if abs(np.linalg.det(cam.k_matrix())) < 1e-12:
            out.append(Violation(ent, "K is not invertible"))

    n_cam = len(log.rig.cameras)
    last_t = -math.inf
    for i, f in enumerate(log.frames):
        ent = f"frame {i}"
        if len(f.image_refs) != n_cam:
            out.append(Violation(ent, "needs one image per rig camera"))
        if f.time <= last_t:
            out.append(Violation(ent, "frame times must be strictly increasing"))
        last_t = f.time

    if len(log.frames) < 2:
        out.append(Violation("scenario", "needs at least 2 recorded frames"))
    if arc_length(log.ego_route) <= 0.0:
        out.append(Violation("scenario", "ego_route must have positive arc length"))
    if not all(d > 0 for d in log.ego_dims):
        out.append(Violation("scenario", "ego_dims must be strictly positive"))

    return out


# ---------------------------------------------------------------------------
# file I/O


def _need(obj, key: str, where: str):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object")
    if key not in obj:
        raise ScenarioError(f"{where}: missing field {key!r}")
    return obj[key]


def _need_list(obj, key: str, where: str) -> list:
    v = _need(obj, key, where)
    if not isinstance(v, list):
        raise ScenarioError(f"{where}.{key}: expected a list")
    return v


def _vec2(v, where: str) -> Vec2:
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise ScenarioError(f"{where}: expected [x, y]")
    return (float(v[0]), float(v[1]))


def _vec3(v, where: str) -> Vec3:
    if not (isinstance(v, (list, tuple)) and len(v) == 3):
        raise ScenarioError(f"{where}: expected [x, y, z]")
    return (float(v[0]), float(v[1]), float(v[2]))


def _polyline(v, where: str) -> tuple[Vec2, ...]:
    if not isinstance(v, (list, tuple)):
        raise ScenarioError(f"{where}: expected list of points")
    return tuple(_vec2(p, where) for p in v)


def _mat4(v, where: str) -> Mat4:
    if not (isinstance(v, (list, tuple)) and len(v) == 4 and all(len(r) == 4 for r in v)):
        raise ScenarioError(f"{where}: expected 4x4 matrix")
    return tuple(tuple(float(x) for x in row) for row in v)


def load_scenario(path: str) -> ScenarioLog:
    """Load and validate a scenario JSON document."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise ScenarioError(
            f"scenario {path!r} is not valid JSON (line {e.lineno}, col {e.colno}): {e.msg}"
        ) from e
    if not isinstance(doc, dict):
        raise ScenarioError(f"scenario {path!r}: top level must be an object")

    version = _need(doc, "b2dr_scenario_version", "scenario")
    if version != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported b2dr_scenario_version {version!r}")

    classes = _need(doc, "classes", "scenario")
    box_classes = tuple(str(c) for c in _need_list(classes, "box", "classes"))
    map_classes = tuple(str(c) for c in _need_list(classes, "map", "classes"))

    cameras = []
    for i, c in enumerate(_need_list(doc, "cameras", "scenario")):
        where = f"cameras[{i}]"
        cameras.append(
            make_camera(
                name=str(_need(c, "name", where)),
                fx=float(_need(c, "fx", where)),
                fy=float(_need(c, "fy", where)),
                cx=float(_need(c, "cx", where)),
                cy=float(_need(c, "cy", where)),
                width=int(_need(c, "width", where)),
                height=int(_need(c, "height", where)),
                ego_to_camera=_mat4(_need(c, "ego_to_camera", where), where),
                K=_mat4(c["K"], where) if "K" in c else None,
            )
        )
    rig = CameraRig(tuple(cameras))

    frames = []
    for i, f in enumerate(_need_list(doc, "frames", "scenario")):
        where = f"frames[{i}]"
        images = _need(f, "images", where)
        if not isinstance(images, dict):
            raise ScenarioError(f"{where}.images: expected an object")
        refs = []
        for cam in rig.cameras:
            if cam.name not in images:
                raise ScenarioError(f"{where}: missing image for camera {cam.name!r}")
            refs.append(str(images[cam.name]))
        frames.append(
            RecordedFrame(
                coord=_vec2(_need(f, "coord", where), where),
                heading=wrap_angle(float(_need(f, "heading", where))),
                time=float(_need(f, "time", where)),
                image_refs=tuple(refs),
            )
        )

    elements = []
    for i, m in enumerate(_need_list(doc, "map", "scenario")):
        where = f"map[{i}]"
        cls = _need(m, "class", where)
        if cls not in map_classes:
            raise ScenarioError(f"{where}: unknown map class {cls!r}")
        elements.append(
            MapElement(
                vertices=_polyline(_need(m, "vertices", where), where),
                class_id=map_classes.index(cls),
                kind=str(_need(m, "kind", where)),
            )
        )

    agents = []
    for i, a in enumerate(_need_list(doc, "agents", "scenario")):
        where = f"agents[{i}]"
        cls = _need(a, "class", where)
        if cls not in box_classes:
            raise ScenarioError(f"{where}: unknown box class {cls!r}")
        agents.append(
            AgentBox(
                id=str(_need(a, "id", where)),
                center=_vec3(_need(a, "center", where), where),
                dims=_vec3(_need(a, "dims", where), where),
                yaw=wrap_angle(float(_need(a, "yaw", where))),
                velocity=_vec2(a.get("velocity", (0.0, 0.0)), where),
                class_id=box_classes.index(cls),
                route=_polyline(a.get("route", ()), where),
                target_speed=(
                    float(a["target_speed"]) if a.get("target_speed") is not None else None
                ),
            )
        )

    log = ScenarioLog(
        frames=tuple(frames),
        rig=rig,
        map_elements=tuple(elements),
        initial_agents=tuple(agents),
        ego_route=_polyline(_need(doc, "ego_route", "scenario"), "ego_route"),
        goal=_vec2(_need(doc, "goal", "scenario"), "goal"),
        box_classes=box_classes,
        map_classes=map_classes,
        ego_dims=_vec3(doc["ego_dims"], "ego_dims") if "ego_dims" in doc else DEFAULT_EGO_DIMS,
        base_dir=os.path.dirname(os.path.abspath(path)),
    )

    violations = validate_scenario(log)
    if violations:
        raise ScenarioError(
            "scenario invariants violated: " + "; ".join(str(v) for v in violations)
        )
    return log


def scenario_to_dict(log: ScenarioLog) -> dict:
    return {
        "b2dr_scenario_version": SCENARIO_VERSION,
        "classes": {"box": list(log.box_classes), "map": list(log.map_classes)},
        "cameras": [
            {
                "name": c.name,
                "fx": c.fx,
                "fy": c.fy,
                "cx": c.cx,
                "cy": c.cy,
                "width": c.width,
                "height": c.height,
                "ego_to_camera": [list(r) for r in c.ego_to_camera],
                "K": [list(r) for r in c.K],
            }
            for c in log.rig.cameras
        ],
        "frames": [
            {
                "coord": list(f.coord),
                "heading": f.heading,
                "time": f.time,
                "images": {
                    cam.name: f.image_refs[i] for i, cam in enumerate(log.rig.cameras)
                },
            }
            for f in log.frames
        ],
        "map": [
            {
                "kind": m.kind,
                "class": log.map_classes[m.class_id],
                "vertices": [list(v) for v in m.vertices],
            }
            for m in log.map_elements
        ],
        "agents": [
            {
                "id": a.id,
                "center": list(a.center),
                "dims": list(a.dims),
                "yaw": a.yaw,
                "velocity": list(a.velocity),
                "class": log.box_classes[a.class_id],
                "route": [list(p) for p in a.route],
                "target_speed": a.target_speed,
            }
            for a in log.initial_agents
        ],
        "ego_route": [list(p) for p in log.ego_route],
        "goal": list(log.goal),
        "ego_dims": list(log.ego_dims),
    }


def save_scenario(log: ScenarioLog, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(log), fh, indent=1)
        fh.write("\n")


def initial_world(log: ScenarioLog) -> WorldState:
    first = log.frames[0]
    ego = make_ego_state(first.coord, first.heading, time=first.time)
    if len(log.frames) > 1:
        nxt = log.frames[1]
        dt = nxt.time - first.time
        if dt > 0:
            ego = replace(ego, velocity=math.dist(nxt.coord, first.coord) / dt)
    return WorldState(
        ego=ego,
        agents=log.initial_agents,
        map_elements=log.map_elements,
        tick=0,
        ego_dims=log.ego_dims,
        map_classes=log.map_classes,
    )
