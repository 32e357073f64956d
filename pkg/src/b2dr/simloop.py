"""Closed-loop orchestrator: plan at the planner rate, track the latest
trajectory and roll background agents at the world rate, render on planner
ticks, and score the finished run with the R-CLS-lite composite.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import behavior, geometry, imgio, polyline, retrieval
from .render import Reference, RefPose, RenderRequest, RenderedFrame, render_frame
from .scenario import (
    AgentBox,
    EgoState,
    ScenarioLog,
    Trajectory,
    WorldState,
    global_to_ego,
    initial_world,
)

DRIVABLE_CLASS = "drivable_area"

# nuPlan-style comfort thresholds
ACCEL_LIMIT = 2.4  # m/s^2
DECEL_LIMIT = 4.05  # m/s^2
JERK_LIMIT = 8.37  # m/s^3
YAW_RATE_LIMIT = 0.95  # rad/s
TTC_HORIZON_S = 1.0
TTC_SUBSTEP_S = 0.1
TTC_THRESHOLD_S = 0.95


@dataclass(frozen=True)
class MetricThresholds:
    accel_limit: float = ACCEL_LIMIT
    decel_limit: float = DECEL_LIMIT
    jerk_limit: float = JERK_LIMIT
    yaw_rate_limit: float = YAW_RATE_LIMIT
    t_ttc: float = TTC_THRESHOLD_S

# an agent maps (rendered frame, ego state, scenario log) to a trajectory;
# objects may expose observe(world) to receive ground-truth state before
# planning (desk-scale stand-in for perception)
Agent = Callable[[RenderedFrame, EgoState, ScenarioLog], Trajectory]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    world_hz: int = 10
    planner_hz: int = 2
    horizon_s: float | None = None  # None: cover the recorded log
    seed: int = 0
    backend: str = "oracle"
    backend_config: dict = field(default_factory=dict)
    idm_params: behavior.IdmParams = behavior.IdmParams()
    resolution: tuple[int, int] = (400, 224)
    waypoint_count: int = 6
    waypoint_dt: float = 0.5
    stop_on_collision: bool = True
    training_mode_retrieval: bool = False
    ref_dropout: float = 0.2  # training-mode empty-reference probability
    thresholds: MetricThresholds = MetricThresholds()

    def validate(self) -> None:
        if self.world_hz <= 0 or self.planner_hz <= 0:
            raise ConfigError("rates must be positive")
        if self.world_hz % self.planner_hz:
            raise ConfigError(
                f"world_hz {self.world_hz} must be divisible by planner_hz {self.planner_hz}"
            )
        if self.horizon_s is not None and self.horizon_s <= 0:
            raise ConfigError("horizon_s must be positive")
        if self.waypoint_count < 1 or self.waypoint_dt <= 0:
            raise ConfigError("waypoint settings must be positive")
        if not (0.0 <= self.ref_dropout <= 1.0):
            raise ConfigError("ref_dropout must be a probability")


def config_from_dict(doc: dict) -> SimConfig:
    """SimConfig from a JSON config document; every field has a default."""
    scalars = {
        "world_hz": int,
        "planner_hz": int,
        "horizon_s": float,
        "seed": int,
        "backend": str,
        "stop_on_collision": bool,
        "training_mode_retrieval": bool,
        "waypoint_count": int,
        "waypoint_dt": float,
        "ref_dropout": float,
    }
    kwargs: dict = {}
    for key, cast in scalars.items():
        if key in doc and doc[key] is not None:
            kwargs[key] = cast(doc[key])
    if "resolution" in doc:
        w, h = doc["resolution"]
        kwargs["resolution"] = (int(w), int(h))
    try:
        base = behavior.IdmParams(**doc["idm"]) if "idm" in doc else behavior.IdmParams()
        base.validate()
        if "idm_per_class" in doc:
            table: dict = {None: base}
            for key, fields in doc["idm_per_class"].items():
                p = replace(base, **fields)
                p.validate()
                table[int(key)] = p
            kwargs["idm_params"] = table
        elif "idm" in doc:
            kwargs["idm_params"] = base
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad idm overrides: {e}") from e
    if "backend_config" in doc:
        kwargs["backend_config"] = dict(doc["backend_config"])
    if "thresholds" in doc:
        try:
            kwargs["thresholds"] = MetricThresholds(**doc["thresholds"])
        except TypeError as e:
            raise ConfigError(f"bad metric thresholds: {e}") from e
    extra = set(doc) - set(scalars) - {
        "resolution",
        "idm",
        "idm_per_class",
        "backend_config",
        "thresholds",
    }
    if extra:
        raise ConfigError(f"unknown config fields: {sorted(extra)}")
    cfg = SimConfig(**kwargs)
    cfg.validate()
    return cfg


@dataclass
class StepRecord:
    tick: int
    time: float
    world: WorldState
    frame: RenderedFrame | None
    trajectory: Trajectory | None
    instant: dict


@dataclass(frozen=True)
class MetricsReport:
    collision_gate: int
    drivable_gate: int
    progress: float
    ttc_score: float
    comfort: float
    composite: float
    events: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "score_kind": "R-CLS-lite",
            "collision_gate": self.collision_gate,
            "drivable_gate": self.drivable_gate,
            "progress": self.progress,
            "ttc_score": self.ttc_score,
            "comfort": self.comfort,
            "composite": self.composite,
            "events": list(self.events),
        }


def composite_score(
    collision_gate: int, drivable_gate: int, progress: float, ttc: float, comfort: float
) -> float:
    """Two multiplicative gates times a (5, 5, 2)/12 weighted mean."""
    return collision_gate * drivable_gate * (5.0 * progress + 5.0 * ttc + 2.0 * comfort) / 12.0


# ---------------------------------------------------------------------------
# geometric checks


def _footprint(center, dims, yaw) -> np.ndarray:
    l, w = dims[0] / 2.0, dims[1] / 2.0
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([center[0], center[1]])


def ego_footprint(world: WorldState) -> np.ndarray:
    return _footprint(world.ego.position, world.ego_dims, world.ego.heading)


def _rects_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two oriented rectangles given as (4, 2) quads."""
    for quad in (a, b):
        for i in range(2):  # two unique edge normals per rectangle
            edge = quad[i + 1] - quad[i]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def collision_check(world: WorldState) -> list[tuple[str, str]]:
    """Ego footprint against every agent footprint (2D oriented boxes)."""
    ego_quad = ego_footprint(world)
    out = []
    for a in world.agents:
        quad = _footprint(a.center, a.dims, a.yaw)
        if _rects_overlap(ego_quad, quad):
            out.append(("ego", a.id))
    return out


def _point_in_polygon(p, vertices) -> bool:
    """Even-odd rule; points exactly on an edge count as inside."""
    x, y = p
    n = len(vertices)
    inside = False
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if (
            abs(cross) < 1e-12
            and min(x1, x2) - 1e-12 <= x <= max(x1, x2) + 1e-12
            and min(y1, y2) - 1e-12 <= y <= max(y1, y2) + 1e-12
        ):
            return True
        if (y1 > y) != (y2 > y):
            t = (y - y1) / (y2 - y1)
            if x1 + t * (x2 - x1) > x:
                inside = not inside
    return inside


def drivable_class_ids(world: WorldState) -> set[int]:
    return {i for i, name in enumerate(world.map_classes) if name == DRIVABLE_CLASS}


def drivable_compliance(world: WorldState) -> int:
    """1 iff all four ego footprint corners lie in some drivable polygon."""
    ids = drivable_class_ids(world)
    polys = [
        m.vertices
        for m in world.map_elements
        if m.kind == "polygon" and m.class_id in ids
    ]
    if not polys:
        return 1  # nothing to violate
    for corner in ego_footprint(world):
        if not any(_point_in_polygon(corner, poly) for poly in polys):
            return 0
    return 1


def progress_score(ego_positions: Sequence, route) -> float:
    """Arc-length fraction of the route covered between first and last pose."""
    if not ego_positions:
        return 0.0
    total = polyline.arc_length(route)
    if total <= 0:
        raise ValueError("route must have positive arc length")
    s0, _ = polyline.project_to_polyline(route, ego_positions[0])
    s1, _ = polyline.project_to_polyline(route, ego_positions[-1])
    return min(max((s1 - s0) / total, 0.0), 1.0)


def _angle_diff(a: float, b: float) -> float:
    d = a - b
    return (d + math.pi) % (2.0 * math.pi) - math.pi


def comfort_score(
    ego_history: Sequence[EgoState], thresholds: MetricThresholds = MetricThresholds()
) -> float:
    """Fraction of ticks whose accel, jerk and yaw rate stay inside limits."""
    if len(ego_history) < 3:
        raise ValueError("need at least 3 samples")
    ok = 0
    checks = 0
    for i in range(2, len(ego_history)):
        e2, e1, e0 = ego_history[i], ego_history[i - 1], ego_history[i - 2]
        dt1 = e2.time - e1.time
        dt0 = e1.time - e0.time
        if dt1 <= 0 or dt0 <= 0:
            continue
        a2 = (e2.velocity - e1.velocity) / dt1
        a1 = (e1.velocity - e0.velocity) / dt0
        jerk = (a2 - a1) / dt1
        yaw_rate = _angle_diff(e2.heading, e1.heading) / dt1
        checks += 1
        if (
            -thresholds.decel_limit <= a2 <= thresholds.accel_limit
            and abs(jerk) <= thresholds.jerk_limit
            and abs(yaw_rate) <= thresholds.yaw_rate_limit
        ):
            ok += 1
    return 1.0 if checks == 0 else ok / checks


def _propagated(world: WorldState, t: float) -> WorldState:
    ego = world.ego
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    new_ego = replace(
        ego,
        position=(
            ego.position[0] + ego.velocity * c * t,
            ego.position[1] + ego.velocity * s * t,
        ),
    )
    agents = tuple(
        replace(
            a,
            center=(
                a.center[0] + a.velocity[0] * t,
                a.center[1] + a.velocity[1] * t,
                a.center[2],
            ),
        )
        for a in world.agents
    )
    return replace(world, ego=new_ego, agents=agents)


def ttc_instant(world: WorldState, t_ttc: float = TTC_THRESHOLD_S) -> int:
    """1 if constant-velocity propagation stays collision-free within the
    TTC threshold (substepped)."""
    n = int(round(TTC_HORIZON_S / TTC_SUBSTEP_S))
    for k in range(1, n + 1):
        t = k * TTC_SUBSTEP_S
        if t > t_ttc + 1e-9:
            break
        if collision_check(_propagated(world, t)):
            return 0
    return 1


def ttc_score(history: Sequence[WorldState], t_ttc: float = TTC_THRESHOLD_S) -> float:
    if not history:
        return 1.0
    return sum(ttc_instant(w, t_ttc) for w in history) / len(history)


# ---------------------------------------------------------------------------
# loop


@dataclass
class SimState:
    log: ScenarioLog
    cfg: SimConfig
    world: WorldState
    backend: object
    rng_retrieval: np.random.Generator
    prev_images: dict
    prev_noise_level: int | None = None
    plan: Trajectory | None = None
    ego_at_plan: EgoState | None = None
    plan_tick: int = -1
    records: list = field(default_factory=list)
    events: list = field(default_factory=list)
    terminated: bool = False
    collided: bool = False
    _image_cache: dict = field(default_factory=dict)

    @property
    def tick(self) -> int:
        return self.world.tick

    def frame_images(self, frame_index: int) -> dict:
        if frame_index not in self._image_cache:
            frame = self.log.frames[frame_index]
            self._image_cache[frame_index] = {
                cam.name: imgio.load_png(self.log.image_path(frame, i))
                for i, cam in enumerate(self.log.rig.cameras)
            }
        return self._image_cache[frame_index]


def _instant_metrics(world: WorldState, thresholds: MetricThresholds = MetricThresholds()) -> dict:
    return {
        "collisions": [list(pair) for pair in collision_check(world)],
        "drivable": drivable_compliance(world),
        "ttc": ttc_instant(world, thresholds.t_ttc),
    }


def reset(log: ScenarioLog, cfg: SimConfig, backend=None) -> SimState:
    """Fresh SimState at tick 0 with the first recorded frame as prev images.

    The record list starts with the initial world so metric histories span
    the whole run; rendered frames attach to the record of the tick at which
    the renderer ran.
    """
    cfg.validate()
    if backend is None:
        from .render import make_backend

        bcfg = dict(cfg.backend_config)
        if cfg.backend == "remote":
            remote = dict(bcfg.get("remote", {}))
            remote.setdefault("rig", log.rig)
            remote.setdefault("resolution", cfg.resolution)
            bcfg["remote"] = remote
        backend = make_backend(cfg.backend, bcfg)
    world = initial_world(log)
    state = SimState(
        log=log,
        cfg=cfg,
        world=world,
        backend=backend,
        rng_retrieval=np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x7E7))),
        prev_images={},
    )
    state.prev_images = state.frame_images(0)
    state.records.append(
        StepRecord(
            tick=0,
            time=world.ego.time,
            world=world,
            frame=None,
            trajectory=None,
            instant=_instant_metrics(world, cfg.thresholds),
        )
    )
    return state


def _build_request(state: SimState) -> RenderRequest:
    log, cfg, world = state.log, state.cfg, state.world
    w, h = cfg.resolution
    masks = {
        cam.name: geometry.rasterize_controls(
            world.agents,
            world.map_elements,
            world.ego,
            cam,
            len(log.box_classes),
            len(log.map_classes),
            height=h,
            width=w,
        )
        for cam in log.rig.cameras
    }
    if cfg.training_mode_retrieval:
        # training-time reference CFG dropout: with probability ref_dropout
        # the renderer sees the empty-reference condition (draw comes first
        # so the stream stays deterministic)
        if state.rng_retrieval.random() < cfg.ref_dropout:
            front = rear = None
        else:
            front, rear = retrieval.hierarchical_sample(log, world.ego, state.rng_retrieval)
    else:
        front, rear = retrieval.nearest_pair(log, world.ego)
    offsets = retrieval.offsets_for(log, world.ego)

    def as_ref(frame, side):
        if frame is None:
            return None
        idx = log.frames.index(frame)
        return Reference(
            pose=RefPose(
                x=frame.coord[0],
                y=frame.coord[1],
                heading=frame.heading,
                offset=offsets[idx],
            ),
            images=state.frame_images(idx),
            side=side,
        )

    seed = int(np.random.SeedSequence(entropy=(cfg.seed, world.tick)).generate_state(1)[0])
    return RenderRequest(
        world=world,
        rig=log.rig,
        masks=masks,
        prev_images=state.prev_images,
        prev_noise_level=state.prev_noise_level,
        ref_front=as_ref(front, "front"),
        ref_rear=as_ref(rear, "rear"),
        resolution=cfg.resolution,
        seed=seed,
    )


def step(state: SimState, agent: Agent) -> StepRecord:
    """Advance one world tick; plan and render on planner ticks."""
    if state.terminated:
        raise RuntimeError("simulation already terminated")
    cfg = state.cfg
    ticks_per_plan = cfg.world_hz // cfg.planner_hz
    dt = 1.0 / cfg.world_hz
    world = state.world
    tick = world.tick

    if tick % ticks_per_plan == 0:
        req = _build_request(state)
        frame = render_frame(state.backend, req)
        state.prev_images = frame.images
        observe = getattr(agent, "observe", None)
        if observe is not None:
            observe(world)
        traj = agent(frame, world.ego, state.log)
        if len(traj.waypoints) < 1 or not all(
            math.isfinite(x) and math.isfinite(y) for x, y in traj.waypoints
        ):
            raise RuntimeError("agent produced an invalid trajectory")
        state.plan = traj
        state.ego_at_plan = world.ego
        state.plan_tick = tick
        # the frame belongs to the tick it was rendered at
        state.records[-1].frame = frame
        state.records[-1].trajectory = traj

    tau = (tick + 1 - state.plan_tick) * dt
    try:
        new_ego = behavior.track_ego_trajectory(
            state.plan, state.ego_at_plan, tau, prev=world.ego
        )
    except behavior.StalePlanError:
        state.events.append(f"tick {tick}: stale plan (horizon exceeded)")
        state.terminated = True
        raise

    stepped = behavior.step_agents(world, dt, cfg.idm_params)
    new_world = replace(stepped, ego=new_ego)
    state.world = new_world

    instant = _instant_metrics(new_world, cfg.thresholds)
    if instant["collisions"]:
        state.collided = True
        state.events.append(
            f"tick {tick + 1}: collision "
            + ", ".join(f"{a}-{b}" for a, b in instant["collisions"])
        )
        if cfg.stop_on_collision:
            state.terminated = True

    record = StepRecord(
        tick=new_world.tick,
        time=new_ego.time,
        world=new_world,
        frame=None,
        trajectory=None,
        instant=instant,
    )
    state.records.append(record)
    return record


def run(
    log: ScenarioLog,
    agent: Agent,
    cfg: SimConfig,
    out_dir: str | None = None,
    backend=None,
) -> tuple[MetricsReport, list[StepRecord]]:
    """Iterate the loop to termination, score it, optionally write artifacts."""
    state = reset(log, cfg, backend=backend)
    horizon = cfg.horizon_s
    if horizon is None:
        horizon = log.frames[-1].time - log.frames[0].time
    total_ticks = int(round(horizon * cfg.world_hz))

    try:
        for _ in range(total_ticks):
            if state.terminated:
                break
            step(state, agent)
    finally:
        report = score_run(state)
        if out_dir is not None:
            write_artifacts(state, report, out_dir)
    return report, state.records


def score_run(state: SimState) -> MetricsReport:
    records = state.records
    ego_states = [r.world.ego for r in records]
    positions = [e.position for e in ego_states]
    progress = progress_score(positions, state.log.ego_route) if positions else 0.0
    th = state.cfg.thresholds
    comfort = comfort_score(ego_states, th) if len(ego_states) >= 3 else 1.0
    ttc = ttc_score([r.world for r in records], th.t_ttc)
    drivable_gate = int(all(r.instant["drivable"] for r in records)) if records else 1
    collision_gate = 0 if state.collided else 1
    return MetricsReport(
        collision_gate=collision_gate,
        drivable_gate=drivable_gate,
        progress=progress,
        ttc_score=ttc,
        comfort=comfort,
        composite=composite_score(collision_gate, drivable_gate, progress, ttc, comfort),
        events=tuple(state.events),
    )


# ---------------------------------------------------------------------------
# artifacts


def _ego_to_dict(e: EgoState) -> dict:
    return {
        "position": list(e.position),
        "heading": e.heading,
        "velocity": e.velocity,
        "acceleration": e.acceleration,
        "steering_angle": e.steering_angle,
        "time": e.time,
    }


def _agent_to_dict(a: AgentBox) -> dict:
    return {
        "id": a.id,
        "center": list(a.center),
        "dims": list(a.dims),
        "yaw": a.yaw,
        "velocity": list(a.velocity),
        "class_id": a.class_id,
    }


def write_artifacts(state: SimState, report: MetricsReport, out_dir: str) -> None:
    """metrics.json, steps.jsonl and per-camera PNG frames under out_dir."""
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "steps.jsonl"), "w", encoding="utf-8") as fh:
        for rec in state.records:
            frame_entry = None
            if rec.frame is not None:
                paths = {}
                for name, img in rec.frame.images.items():
                    rel = os.path.join("frames", f"cam_{name}_{rec.tick:06d}.png")
                    imgio.save_png(img, os.path.join(out_dir, rel))
                    paths[name] = rel
                frame_entry = {"backend": rec.frame.backend_id, "images": paths}
            doc = {
                "tick": rec.tick,
                "time": rec.time,
                "world": {
                    "ego": _ego_to_dict(rec.world.ego),
                    "agents": [_agent_to_dict(a) for a in rec.world.agents],
                },
                "frame": frame_entry,
                "trajectory": (
                    {
                        "waypoints": [list(p) for p in rec.trajectory.waypoints],
                        "waypoint_dt": rec.trajectory.waypoint_dt,
                        "plan_time": rec.trajectory.plan_time,
                    }
                    if rec.trajectory is not None
                    else None
                ),
                "instant": rec.instant,
            }
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def recompute_metrics(log: ScenarioLog, steps_path: str) -> MetricsReport:
    """Re-derive a MetricsReport from a steps.jsonl artifact."""
    ego_states = []
    worlds = []
    drivable = []
    collided = False
    with open(steps_path, "r", encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            e = doc["world"]["ego"]
            from .scenario import make_ego_state

            ego = make_ego_state(
                tuple(e["position"]),
                e["heading"],
                e["velocity"],
                e["acceleration"],
                e["steering_angle"],
                e["time"],
            )
            agents = tuple(
                AgentBox(
                    id=a["id"],
                    center=tuple(a["center"]),
                    dims=tuple(a["dims"]),
                    yaw=a["yaw"],
                    velocity=tuple(a["velocity"]),
                    class_id=a["class_id"],
                )
                for a in doc["world"]["agents"]
            )
            world = WorldState(
                ego=ego,
                agents=agents,
                map_elements=log.map_elements,
                tick=doc["tick"],
                ego_dims=log.ego_dims,
                map_classes=log.map_classes,
            )
            worlds.append(world)
            ego_states.append(ego)
            drivable.append(doc["instant"]["drivable"])
            if doc["instant"]["collisions"]:
                collided = True
    if not worlds:
        raise ValueError(f"{steps_path}: no step records")
    progress = progress_score([e.position for e in ego_states], log.ego_route)
    comfort = comfort_score(ego_states) if len(ego_states) >= 3 else 1.0
    ttc = ttc_score(worlds)
    collision_gate = 0 if collided else 1
    drivable_gate = int(all(drivable))
    return MetricsReport(
        collision_gate=collision_gate,
        drivable_gate=drivable_gate,
        progress=progress,
        ttc_score=ttc,
        comfort=comfort,
        composite=composite_score(collision_gate, drivable_gate, progress, ttc, comfort),
        events=(),
    )


# ---------------------------------------------------------------------------
# built-in planner agents


def _interp_coord(log: ScenarioLog, t: float) -> tuple[float, float]:
    frames = log.frames
    if t <= frames[0].time:
        return frames[0].coord
    if t >= frames[-1].time:
        return frames[-1].coord
    for i in range(len(frames) - 1):
        a, b = frames[i], frames[i + 1]
        if a.time <= t <= b.time:
            span = b.time - a.time
            f = 0.0 if span == 0 else (t - a.time) / span
            return (
                a.coord[0] + f * (b.coord[0] - a.coord[0]),
                a.coord[1] + f * (b.coord[1] - a.coord[1]),
            )
    return frames[-1].coord


class IdmLaneAgent:
    """Follows the ego route with IDM speed control against observed traffic."""

    def __init__(self, waypoint_count: int, waypoint_dt: float):
        self.waypoint_count = waypoint_count
        self.waypoint_dt = waypoint_dt
        self.params = behavior.IdmParams()
        self._world: WorldState | None = None

    def observe(self, world: WorldState) -> None:
        self._world = world

    def __call__(self, frame, ego: EgoState, log: ScenarioLog) -> Trajectory:
        route = log.ego_route
        s, _ = polyline.project_to_polyline(route, ego.position)
        ego_box = AgentBox(
            id="__ego_plan__",
            center=(ego.position[0], ego.position[1], log.ego_dims[2] / 2.0),
            dims=log.ego_dims,
            yaw=ego.heading,
            velocity=(
                ego.velocity * math.cos(ego.heading),
                ego.velocity * math.sin(ego.heading),
            ),
            class_id=0,
            route=route,
        )
        lead0 = None
        if self._world is not None:
            lead0 = behavior.select_lead(ego_box, self._world, lookahead=120.0)
        v = max(ego.velocity, 0.0)
        arc = s
        pts = []
        for _ in range(self.waypoint_count):
            lead = None
            if lead0 is not None:
                gap = lead0[0] - (arc - s)
                lead = (max(gap, 1e-3), lead0[1])
            try:
                a = behavior.idm_acceleration(v, lead, self.params)
            except behavior.LeadOverlapError:
                a = -self.params.b_comf
            v = max(v + a * self.waypoint_dt, 0.0)
            arc += v * self.waypoint_dt
            pts.append(global_to_ego(polyline.point_at_arc(route, arc), ego))
        return Trajectory(tuple(pts), self.waypoint_dt, ego.time)


def make_builtin_agent(
    kind: str, waypoint_count: int = 6, waypoint_dt: float = 0.5
) -> Agent:
    """log_replay follows recorded coords, constant_velocity extrapolates the
    current speed along the heading, idm_lane tracks the ego route under IDM."""
    kind = kind.replace("-", "_")

    if kind == "log_replay":

        def log_replay(frame, ego: EgoState, log: ScenarioLog) -> Trajectory:
            pts = tuple(
                global_to_ego(_interp_coord(log, ego.time + j * waypoint_dt), ego)
                for j in range(1, waypoint_count + 1)
            )
            return Trajectory(pts, waypoint_dt, ego.time)

        return log_replay

    if kind == "constant_velocity":

        def constant_velocity(frame, ego: EgoState, log: ScenarioLog) -> Trajectory:
            pts = tuple(
                (ego.velocity * j * waypoint_dt, 0.0) for j in range(1, waypoint_count + 1)
            )
            return Trajectory(pts, waypoint_dt, ego.time)

        return constant_velocity

    if kind == "idm_lane":
        return IdmLaneAgent(waypoint_count, waypoint_dt)

    raise ValueError(f"unknown agent kind {kind!r}")
