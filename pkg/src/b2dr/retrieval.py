"""Spatial retrieval of reference frames from the recorded log.

Offsets are signed distances of recorded ego coordinates along the current
motion direction: positive means the frame lies ahead. Inference retrieval
takes the nearest frame on each side; training-time retrieval draws from
banded distance intervals to widen the reference distribution.
"""

from __future__ import annotations

import math

import numpy as np

from .scenario import EgoState, RecordedFrame, ScenarioLog

SPEED_EPS = 0.1  # m/s, below this the velocity direction is degenerate

SAMPLE_INTERVALS = ((2.0, 5.0), (5.0, 10.0), (10.0, 15.0))
SAMPLE_PROBS = (0.1, 0.3, 0.6)


class DegenerateHeadingError(ValueError):
    """Ego velocity is too small to define a fore/aft direction."""


def signed_offsets(
    frames: tuple[RecordedFrame, ...],
    ego_coord: tuple[float, float],
    ego_velocity: tuple[float, float],
) -> list[float]:
    """Signed along-track distance of each frame from the ego, meters."""
    speed = math.hypot(*ego_velocity)
    if speed <= SPEED_EPS:
        raise DegenerateHeadingError(f"ego speed {speed:.3f} m/s is degenerate")
    ux, uy = ego_velocity[0] / speed, ego_velocity[1] / speed
    return [
        (f.coord[0] - ego_coord[0]) * ux + (f.coord[1] - ego_coord[1]) * uy
        for f in frames
    ]


def offsets_for(log: ScenarioLog, ego: EgoState) -> list[float]:
    """Signed offsets of all log frames, falling back to the heading vector
    when the ego speed is degenerate."""
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    vel = (ego.velocity * c, ego.velocity * s)
    try:
        return signed_offsets(log.frames, ego.position, vel)
    except DegenerateHeadingError:
        # standstill: the heading unit vector keeps fore/aft well defined
        return signed_offsets(log.frames, ego.position, (c, s))


def nearest_pair(
    log: ScenarioLog, ego: EgoState
) -> tuple[RecordedFrame | None, RecordedFrame | None]:
    """Closest recorded frame ahead and behind the ego (offset 0 counts as ahead)."""
    offsets = offsets_for(log, ego)
    front = rear = None
    front_p = math.inf
    rear_p = -math.inf
    for f, p in zip(log.frames, offsets):
        if p >= 0.0:
            if p < front_p:
                front, front_p = f, p
        elif p > rear_p:
            rear, rear_p = f, p
    return front, rear


def hierarchical_sample(
    log: ScenarioLog, ego: EgoState, rng: np.random.Generator
) -> tuple[RecordedFrame | None, RecordedFrame | None]:
    """Training-time reference pick from banded distance intervals.

    For each side an interval is drawn with probabilities SAMPLE_PROBS
    (renormalized over the non-empty intervals for that side) and a frame is
    chosen uniformly inside it. A side with no banded candidates falls back
    to the nearest-frame rule. Draw order: front interval, front frame, rear
    interval, rear frame.
    """
    offsets = offsets_for(log, ego)
    front_bands: list[list[RecordedFrame]] = [[] for _ in SAMPLE_INTERVALS]
    rear_bands: list[list[RecordedFrame]] = [[] for _ in SAMPLE_INTERVALS]
    for f, p in zip(log.frames, offsets):
        bands = front_bands if p >= 0.0 else rear_bands
        for k, (lo, hi) in enumerate(SAMPLE_INTERVALS):
            if lo <= abs(p) <= hi:
                bands[k].append(f)
                break

    def pick(bands: list[list[RecordedFrame]]) -> RecordedFrame | None:
        weights = [w for b, w in zip(bands, SAMPLE_PROBS) if b]
        nonempty = [b for b in bands if b]
        if not nonempty:
            return None
        total = sum(weights)
        u = rng.random()
        acc = 0.0
        chosen = nonempty[-1]
        for b, w in zip(nonempty, weights):
            acc += w / total
            if u < acc:
                chosen = b
                break
        return chosen[int(rng.integers(len(chosen)))]

    front = pick(front_bands)
    rear = pick(rear_bands)
    if front is None or rear is None:
        nf, nr = nearest_pair(log, ego)
        front = front if front is not None else nf
        rear = rear if rear is not None else nr
    return front, rear
