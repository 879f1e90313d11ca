"""Intersection geometry and piecewise-constant-acceleration vehicle mobility."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# Times closer than this to a phase boundary are snapped onto it.
_TIME_EPS = 1e-9


class EpisodeComplete(Exception):
    """Raised when a kinematic update would run past the scenario duration."""


@dataclass(frozen=True)
class ScenarioConfig:
    h_c: float = 200.0
    h_r: float = 200.0
    slot_duration: float = 0.005
    total_time: float = 10.0
    mobility_phases: tuple[tuple[float, float], ...] = ((4.0, -4.0), (2.0, 0.0), (4.0, 4.0))
    initial_velocity: float = 16.0
    initial_acceleration: float = -4.0

    def __post_init__(self):
        if self.h_c <= 0:
            raise ValueError("h_c must be positive")
        if self.h_r < 0:
            raise ValueError("h_r must be non-negative")
        if self.slot_duration <= 0 or self.total_time <= 0:
            raise ValueError("slot_duration and total_time must be positive")
        if not self.mobility_phases:
            raise ValueError("at least one mobility phase is required")
        if any(d <= 0 for d, _ in self.mobility_phases):
            raise ValueError("phase durations must be positive")
        span = sum(d for d, _ in self.mobility_phases)
        if abs(span - self.total_time) > 1e-9 * max(1.0, self.total_time):
            raise ValueError(
                f"phase durations sum to {span}, expected total_time {self.total_time}")
        if self.initial_velocity < 0:
            raise ValueError("initial_velocity must be non-negative")

    @property
    def n_slots(self) -> int:
        return int(round(self.total_time / self.slot_duration))

    def phase_bounds(self) -> list[tuple[float, float, float]]:
        """(start, end, acceleration) for each phase."""
        out = []
        t = 0.0
        for dur, acc in self.mobility_phases:
            out.append((t, t + dur, acc))
            t += dur
        return out


def stationary_config(velocity: float = 8.0, **overrides) -> ScenarioConfig:
    """Constant-speed variant of the default intersection pass."""
    base = ScenarioConfig()
    total = overrides.pop("total_time", base.total_time)
    return replace(base, total_time=total, mobility_phases=((total, 0.0),),
                   initial_velocity=velocity, initial_acceleration=0.0, **overrides)


@dataclass(frozen=True)
class KinematicState:
    s: float = 0.0
    v: float = 0.0
    a: float = 0.0
    t: float = 0.0


def initial_state(cfg: ScenarioConfig) -> KinematicState:
    return KinematicState(s=0.0, v=cfg.initial_velocity, a=_accel_at(cfg, 0.0), t=0.0)


def _accel_at(cfg: ScenarioConfig, t: float) -> float:
    for start, end, acc in cfg.phase_bounds():
        if t < end - _TIME_EPS:
            return acc
    return cfg.mobility_phases[-1][1]


def _segment(s: float, v: float, acc: float, dt: float) -> tuple[float, float]:
    """Constant-acceleration motion with the velocity clamped at zero."""
    if acc < 0 and v + acc * dt < 0:
        stop = -v / acc
        return s + v * stop + 0.5 * acc * stop * stop, 0.0
    return s + v * dt + 0.5 * acc * dt * dt, v + acc * dt


def advance(state: KinematicState, cfg: ScenarioConfig, dt: float) -> KinematicState:
    """Move the vehicle forward by ``dt`` seconds, splitting at phase boundaries."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    t_end = state.t + dt
    if t_end > cfg.total_time + _TIME_EPS:
        raise EpisodeComplete(f"t={t_end:.6f} s exceeds total_time={cfg.total_time} s")
    s, v, t = state.s, state.v, state.t
    for start, end, acc in cfg.phase_bounds():
        if t >= end - _TIME_EPS:
            continue
        stop = min(end, t_end)
        if stop - t > 0:
            s, v = _segment(s, v, acc, stop - t)
        t = stop
        if t >= t_end - _TIME_EPS:
            break
    t = t_end
    a = _accel_at(cfg, t)
    if v == 0.0 and a < 0:
        a = 0.0
    return KinematicState(s=s, v=v, a=a, t=t)


def state_at(cfg: ScenarioConfig, t: float) -> KinematicState:
    """Kinematic state at absolute time ``t`` (no accumulated rounding)."""
    start = initial_state(cfg)
    if t <= 0:
        return start
    return advance(start, cfg, t)


def los_angle_of_position(s, h_c: float, h_r: float):
    """BS-side LoS angle for distance traveled ``s`` (scalar or array).

    Measured from the road direction: 3*pi/4 at the start when h_r == h_c,
    pi/2 with the MS at the foot of the perpendicular, decreasing in ``s``.
    """
    if hasattr(s, "__len__"):
        return 0.5 * np.pi + np.arctan((h_r - np.asarray(s)) / h_c)
    return 0.5 * math.pi + math.atan((h_r - s) / h_c)


def los_angles(state: KinematicState, cfg: ScenarioConfig) -> tuple[float, float]:
    """(AoA at the BS, AoD at the MS) of the line-of-sight ray.

    Both arrays lie parallel to the road, so the MS sees the same ray from
    the opposite side: ``phi_D = pi - phi_A``.
    """
    phi_a = los_angle_of_position(state.s, cfg.h_c, cfg.h_r)
    return phi_a, math.pi - phi_a
