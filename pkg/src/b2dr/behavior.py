"""Reactive behavioral controller: IDM car following for background agents
along their stored routes, plus ego trajectory tracking between plans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

from . import polyline
from .scenario import (
    AgentBox,
    EgoState,
    Trajectory,
    WorldState,
    ego_to_global,
    make_ego_state,
    wrap_angle,
)

LEAD_CORRIDOR_MARGIN = 0.5  # m each side, avoids boundary flicker
MIN_HEADING_DISPLACEMENT = 1e-6  # m


class LeadOverlapError(ValueError):
    """Bumper gap is non-positive; the vehicles already overlap."""


class StalePlanError(ValueError):
    """Requested tracking time is beyond the trajectory horizon."""


@dataclass(frozen=True)
class IdmParams:
    v0: float = 10.0  # desired speed, m/s
    T_headway: float = 1.5  # s
    s0: float = 2.0  # minimum gap, m
    a_max: float = 1.5  # m/s^2
    b_comf: float = 2.0  # m/s^2
    delta: float = 4.0

    def validate(self) -> None:
        vals = (self.v0, self.T_headway, self.s0, self.a_max, self.b_comf, self.delta)
        if any(v <= 0 for v in vals):
            raise ValueError("IdmParams must all be strictly positive")
        if self.delta < 1:
            raise ValueError("IdmParams.delta must be >= 1")


def idm_acceleration(
    v: float, lead: tuple[float, float] | None, p: IdmParams
) -> float:
    """Longitudinal IDM acceleration for speed v and optional (gap, v_lead)."""
    free = 1.0 - (v / p.v0) ** p.delta
    if lead is None:
        return p.a_max * free
    gap, v_lead = lead
    if gap <= 0.0:
        raise LeadOverlapError("lead overlap")
    dv = v - v_lead
    s_star = p.s0 + v * p.T_headway + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
    return p.a_max * (free - (s_star / gap) ** 2)


def equilibrium_gap(v: float, p: IdmParams, tol: float = 1e-10) -> float:
    """Gap where IDM acceleration vanishes at matched speeds, by bisection."""
    lo, hi = 1e-6, 10.0 * (p.s0 + v * p.T_headway) + 100.0
    if idm_acceleration(v, (hi, v), p) < 0.0:
        raise ValueError("no equilibrium below bracket; v too close to v0")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if idm_acceleration(v, (mid, v), p) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _ego_as_box(world: WorldState) -> AgentBox:
    ego = world.ego
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    return AgentBox(
        id="__ego__",
        center=(ego.position[0], ego.position[1], world.ego_dims[2] / 2.0),
        dims=world.ego_dims,
        yaw=ego.heading,
        velocity=(ego.velocity * c, ego.velocity * s),
        class_id=0,
    )


def select_lead(
    agent: AgentBox, world: WorldState, lookahead: float
) -> tuple[float, float] | None:
    """Nearest box (other agents or the ego) ahead in the agent's route corridor.

    Returns (bumper-to-bumper gap along the route, lead speed along the route
    tangent) or None. Corridor half-width is the agent's half width plus a
    fixed margin.
    """
    if len(agent.route) < 2:
        raise ValueError(f"agent {agent.id} has no route")
    route = agent.route
    own_s, _ = polyline.project_to_polyline(route, agent.center[:2])
    half_width = agent.dims[1] / 2.0 + LEAD_CORRIDOR_MARGIN

    best: tuple[float, float] | None = None
    candidates = [b for b in world.agents if b.id != agent.id]
    candidates.append(_ego_as_box(world))
    for other in candidates:
        s, lat = polyline.project_to_polyline(route, other.center[:2])
        ahead = s - own_s
        if ahead <= 0.0 or ahead > lookahead or abs(lat) > half_width:
            continue
        gap = ahead - other.dims[0] / 2.0 - agent.dims[0] / 2.0
        tx, ty = polyline.tangent_at_arc(route, s)
        v_lead = other.velocity[0] * tx + other.velocity[1] * ty
        if best is None or gap < best[0]:
            best = (gap, v_lead)
    return best


def _params_for(agent: AgentBox, params: Mapping[int, IdmParams] | IdmParams) -> IdmParams:
    if isinstance(params, IdmParams):
        p = params
    else:
        # per-class table; key None (when present) is the fallback
        p = params.get(agent.class_id) or params.get(None) or IdmParams()
    if agent.target_speed is not None:
        p = replace(p, v0=agent.target_speed)
    return p


def step_agents(
    world: WorldState,
    dt: float,
    params: Mapping[int, IdmParams] | IdmParams = IdmParams(),
    lookahead: float = 100.0,
) -> WorldState:
    """Advance every dynamic agent one tick of semi-implicit Euler.

    Speeds follow IDM along the stored route; heading follows the route
    tangent. Agents reaching the route end stop there. The ego is untouched
    (tracked separately) and the tick counter increments.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    new_agents = []
    for agent in world.agents:
        if not agent.dynamic:
            new_agents.append(agent)
            continue
        p = _params_for(agent, params)
        v = agent.speed
        try:
            a = idm_acceleration(v, select_lead(agent, world, lookahead), p)
        except LeadOverlapError:
            a = -math.inf  # already overlapping: hard stop
        v_new = max(v + a * dt, 0.0)
        route = agent.route
        s, _ = polyline.project_to_polyline(route, agent.center[:2])
        total = polyline.arc_length(route)
        s_new = s + v_new * dt
        if s_new >= total:
            s_new = total
            v_new = 0.0
        x, y = polyline.point_at_arc(route, s_new)
        tx, ty = polyline.tangent_at_arc(route, s_new)
        new_agents.append(
            replace(
                agent,
                center=(x, y, agent.center[2]),
                yaw=wrap_angle(math.atan2(ty, tx)),
                velocity=(v_new * tx, v_new * ty),
            )
        )
    return replace(world, agents=tuple(new_agents), tick=world.tick + 1)


def _interp_waypoint(traj: Trajectory, tau: float) -> tuple[float, float, float, float]:
    """Ego-frame position and segment direction at time tau since the plan."""
    pts = ((0.0, 0.0),) + tuple(traj.waypoints)
    seg = int(tau / traj.waypoint_dt)
    seg = min(seg, len(pts) - 2)
    frac = tau / traj.waypoint_dt - seg
    ax, ay = pts[seg]
    bx, by = pts[seg + 1]
    x = ax + frac * (bx - ax)
    y = ay + frac * (by - ay)
    # walk back to the last segment with usable extent for the heading
    for k in range(seg, -1, -1):
        dx = pts[k + 1][0] - pts[k][0]
        dy = pts[k + 1][1] - pts[k][1]
        if math.hypot(dx, dy) >= MIN_HEADING_DISPLACEMENT:
            return x, y, dx, dy
    return x, y, 0.0, 0.0


def track_ego_trajectory(
    traj: Trajectory,
    ego_at_plan: EgoState,
    tau: float,
    prev: EgoState | None = None,
) -> EgoState:
    """Ego pose at tau seconds after the plan, by linear waypoint interpolation.

    The trajectory starts at an implicit (0, 0) waypoint at tau = 0. Velocity
    and acceleration come from finite differences against `prev` when given.
    """
    if tau < 0.0 or tau > traj.horizon + 1e-9:
        raise StalePlanError(
            f"tau={tau:.3f}s beyond trajectory horizon {traj.horizon:.3f}s"
        )
    if tau == 0.0:
        return ego_at_plan

    x, y, dx, dy = _interp_waypoint(traj, min(tau, traj.horizon))
    position = ego_to_global((x, y), ego_at_plan)
    if math.hypot(dx, dy) >= MIN_HEADING_DISPLACEMENT:
        heading = wrap_angle(ego_at_plan.heading + math.atan2(dy, dx))
    else:
        heading = prev.heading if prev is not None else ego_at_plan.heading

    time = ego_at_plan.time + tau
    velocity = ego_at_plan.velocity
    acceleration = ego_at_plan.acceleration
    if prev is not None and time > prev.time:
        dt = time - prev.time
        step = math.dist(position, prev.position)
        c, s = math.cos(prev.heading), math.sin(prev.heading)
        forward = (position[0] - prev.position[0]) * c + (
            position[1] - prev.position[1]
        ) * s
        velocity = math.copysign(step / dt, forward) if step > 0 else 0.0
        acceleration = (velocity - prev.velocity) / dt
    state = make_ego_state(
        position, heading, velocity, acceleration, ego_at_plan.steering_angle, time
    )
    return state
