"""ULA channel model: steering vectors, beamformed gains, AR(1) fading,
channel sources (synthetic LoS, synthetic multipath, ray-tracing traces)."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .scenario import KinematicState, ScenarioConfig, los_angle_of_position, state_at

D_OVER_LAMBDA = 0.5


class TraceFormatError(ValueError):
    """Malformed or inconsistent trace file."""


@dataclass(frozen=True)
class SteeringVector:
    elements: np.ndarray
    phi: float
    M: int
    d_over_lambda: float = D_OVER_LAMBDA


@dataclass(frozen=True)
class Path:
    alpha: complex
    phi_a: float
    phi_d: float


@dataclass(frozen=True)
class ChannelSnapshot:
    paths: tuple[Path, ...]
    t_k: int = 0
    position_m: float | None = None

    def __post_init__(self):
        if len(self.paths) < 1:
            raise ValueError("a snapshot needs at least one path")

    @property
    def L(self) -> int:
        return len(self.paths)

    @property
    def los(self) -> Path:
        return self.paths[0]


@dataclass(frozen=True)
class GainProcessState:
    alpha: complex = 1.0 + 0.0j
    rho: float = 0.995

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def innovation_variance(self) -> float:
        return 1.0 - self.rho * self.rho


@dataclass(frozen=True)
class ObservationSignal:
    y_re: float
    y_im: float
    noise_variance: float

    @property
    def y(self) -> complex:
        return complex(self.y_re, self.y_im)


def steering(phi: float, M: int, d_over_lambda: float = D_OVER_LAMBDA) -> SteeringVector:
    if M < 1:
        raise ValueError("antenna count M must be at least 1")
    m = np.arange(M)
    elements = np.exp(1j * 2.0 * np.pi * d_over_lambda * m * math.cos(phi)) / math.sqrt(M)
    return SteeringVector(elements=elements, phi=phi, M=M, d_over_lambda=d_over_lambda)


def beam_gain(phi: float, phi_bar: float, M: int,
              d_over_lambda: float = D_OVER_LAMBDA) -> complex:
    """Inner product a(phi_bar)^H a(phi) of two unit-norm steering vectors."""
    if M < 1:
        raise ValueError("antenna count M must be at least 1")
    return kernels.dirichlet(math.cos(phi) - math.cos(phi_bar), M, d_over_lambda)


def evolve_gain(state: GainProcessState, rng: np.random.Generator) -> GainProcessState:
    """One AR(1) step per real component with unit stationary variance."""
    sd = math.sqrt(state.innovation_variance)
    u = rng.standard_normal(2)
    re = state.rho * state.alpha.real + sd * u[0]
    im = state.rho * state.alpha.imag + sd * u[1]
    return GainProcessState(alpha=complex(re, im), rho=state.rho)


def noise_variance_for_snr(snr_db: float, n_r: int = 16, n_t: int = 16,
                           reference_antennas: int = 16) -> float:
    """Noise power giving ``snr_db`` for an aligned unit-gain path.

    The reference SNR holds for a ``reference_antennas`` square array; other
    array sizes shift it by their array-gain ratio.
    """
    scale = (reference_antennas * reference_antennas) / float(n_r * n_t)
    return 10.0 ** (-snr_db / 10.0) * scale


def noiseless_response(snapshot: ChannelSnapshot, phi_bar_a: float, phi_bar_d: float,
                       n_r: int, n_t: int, d_over_lambda: float = D_OVER_LAMBDA) -> complex:
    paths = snapshot.paths
    if len(paths) == 1:
        p = paths[0]
        g_r = kernels.dirichlet(math.cos(p.phi_a) - math.cos(phi_bar_a), n_r, d_over_lambda)
        g_t = kernels.dirichlet(math.cos(p.phi_d) - math.cos(phi_bar_d), n_t, d_over_lambda)
        return p.alpha * g_r * g_t.conjugate()
    return kernels.path_response(
        [p.alpha.real for p in paths], [p.alpha.imag for p in paths],
        [math.cos(p.phi_a) for p in paths], [math.cos(p.phi_d) for p in paths],
        math.cos(phi_bar_a), math.cos(phi_bar_d), n_r, n_t, d_over_lambda)


def observe(snapshot: ChannelSnapshot, phi_bar_a: float, phi_bar_d: float,
            n_r: int, n_t: int, noise_variance: float,
            rng: np.random.Generator | None = None,
            d_over_lambda: float = D_OVER_LAMBDA) -> ObservationSignal:
    """Beamformed received signal w^H H f + noise for the given pointing."""
    if not snapshot.paths:
        raise ValueError("snapshot has no paths")
    y = noiseless_response(snapshot, phi_bar_a, phi_bar_d, n_r, n_t, d_over_lambda)
    if noise_variance > 0:
        if rng is None:
            raise ValueError("an rng is required when noise_variance > 0")
        n = rng.standard_normal(2) * math.sqrt(noise_variance / 2.0)
        y += complex(n[0], n[1])
    return ObservationSignal(y_re=y.real, y_im=y.imag, noise_variance=noise_variance)


# --- channel sources -------------------------------------------------------

class LosChannel:
    """Single LoS path following the scenario geometry with AR(1) fading."""

    def __init__(self, scenario: ScenarioConfig, rho: float = 0.995,
                 initial_gain: complex = 1.0 + 0.0j):
        self.scenario = scenario
        self.rho = rho
        self.initial_gain = initial_gain
        self._gain = GainProcessState(initial_gain, rho)
        self._rng: np.random.Generator | None = None
        self._slot = -1

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self._gain = GainProcessState(self.initial_gain, self.rho)
        self._slot = 0

    def _step_gains(self, slot: int) -> None:
        while self._slot < slot:
            self._gain = evolve_gain(self._gain, self._rng)
            self._slot += 1

    def snapshot(self, kin: KinematicState, slot: int) -> ChannelSnapshot:
        self._step_gains(slot)
        phi_a = los_angle_of_position(kin.s, self.scenario.h_c, self.scenario.h_r)
        return ChannelSnapshot((Path(self._gain.alpha, phi_a, math.pi - phi_a),), slot, kin.s)


class MultipathChannel(LosChannel):
    """LoS plus reflected paths at fixed angular offsets from the LoS ray.

    Each reflected path fades independently and is scaled by
    ``reflection_coeff``.
    """

    def __init__(self, scenario: ScenarioConfig, rho: float = 0.995,
                 offsets: Sequence[float] = (0.45, -0.6),
                 reflection_coeff: float = 0.5, initial_gain: complex = 1.0 + 0.0j):
        super().__init__(scenario, rho, initial_gain)
        self.offsets = tuple(offsets)
        self.reflection_coeff = reflection_coeff
        self._reflected: list[GainProcessState] = []

    def reset(self, rng: np.random.Generator) -> None:
        super().reset(rng)
        self._reflected = [GainProcessState(1.0 + 0.0j, self.rho) for _ in self.offsets]

    def _step_gains(self, slot: int) -> None:
        while self._slot < slot:
            self._gain = evolve_gain(self._gain, self._rng)
            self._reflected = [evolve_gain(g, self._rng) for g in self._reflected]
            self._slot += 1

    def snapshot(self, kin: KinematicState, slot: int) -> ChannelSnapshot:
        self._step_gains(slot)
        phi_a = los_angle_of_position(kin.s, self.scenario.h_c, self.scenario.h_r)
        paths = [Path(self._gain.alpha, phi_a, math.pi - phi_a)]
        for off, g in zip(self.offsets, self._reflected):
            pa = min(max(phi_a + off, 1e-3), math.pi - 1e-3)
            paths.append(Path(self.reflection_coeff * g.alpha, pa, math.pi - pa))
        return ChannelSnapshot(tuple(paths), slot, kin.s)


class TraceChannel:
    """Replays ingested snapshots, choosing the record nearest the MS position."""

    def __init__(self, snapshots: Sequence[ChannelSnapshot]):
        if not snapshots:
            raise TraceFormatError("no records")
        positions = [s.position_m if s.position_m is not None else float(i)
                     for i, s in enumerate(snapshots)]
        if any(b < a for a, b in zip(positions, positions[1:])):
            raise TraceFormatError("trace positions must be non-decreasing")
        self.snapshots = list(snapshots)
        self.positions = positions

    @classmethod
    def from_file(cls, path) -> "TraceChannel":
        return cls(load_trace(path))

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def snapshot(self, kin: KinematicState, slot: int) -> ChannelSnapshot:
        i = bisect.bisect_left(self.positions, kin.s)
        if i == len(self.positions):
            i -= 1
        elif i > 0 and kin.s - self.positions[i - 1] <= self.positions[i] - kin.s:
            i -= 1
        snap = self.snapshots[i]
        return ChannelSnapshot(snap.paths, slot, snap.position_m)


# --- trace files -----------------------------------------------------------

def _parse_line(text: str, lineno: int) -> tuple[int, ChannelSnapshot]:
    fields = [f.strip() for f in text.split(",")]
    try:
        step = int(fields[0])
        position = float(fields[1])
        n_paths = int(fields[2])
    except (IndexError, ValueError) as exc:
        raise TraceFormatError(f"line {lineno}: bad record header ({exc})") from None
    if n_paths < 1:
        raise TraceFormatError(f"line {lineno}: n_paths must be >= 1")
    if len(fields) != 3 + 4 * n_paths:
        raise TraceFormatError(
            f"line {lineno}: expected {3 + 4 * n_paths} fields, found {len(fields)}")
    try:
        vals = [float(f) for f in fields[3:]]
    except ValueError as exc:
        raise TraceFormatError(f"line {lineno}: {exc}") from None
    paths = tuple(Path(complex(vals[4 * i], vals[4 * i + 1]), vals[4 * i + 2], vals[4 * i + 3])
                  for i in range(n_paths))
    return step, ChannelSnapshot(paths, step, position)


def load_trace(path) -> list[ChannelSnapshot]:
    """Read a comma-separated multipath trace (one record per line)."""
    records: list[ChannelSnapshot] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            step, snap = _parse_line(line, lineno)
            if step != len(records):
                raise TraceFormatError(
                    f"line {lineno}: step index {step} out of sequence, expected {len(records)}")
            records.append(snap)
    if not records:
        raise TraceFormatError("no records")
    return records


def format_trace_line(step: int, snap: ChannelSnapshot) -> str:
    pos = snap.position_m if snap.position_m is not None else 0.0
    parts = [str(step), repr(float(pos)), str(snap.L)]
    for p in snap.paths:
        parts += [repr(float(p.alpha.real)), repr(float(p.alpha.imag)),
                  repr(float(p.phi_a)), repr(float(p.phi_d))]
    return ",".join(parts)


def write_trace(path, snapshots: Iterable[ChannelSnapshot], header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for step, snap in enumerate(snapshots):
            fh.write(format_trace_line(step, snap) + "\n")


def generate_trace(scenario: ScenarioConfig, n_records: int = 600, n_paths: int = 3,
                   rho: float = 0.995, reflection_coeff: float = 0.5,
                   offsets: Sequence[float] | None = None,
                   rng: np.random.Generator | None = None) -> list[ChannelSnapshot]:
    """Synthetic multipath trace sampled at uniform positions along the route.

    A stand-in for ray-tracing exports: LoS plus ``n_paths - 1`` reflections,
    gains fading as AR(1) processes over successive positions.
    """
    if n_paths < 1 or n_records < 1:
        raise ValueError("n_paths and n_records must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    if offsets is None:
        offsets = [0.45 * (1 if i % 2 == 0 else -1.3) * (1 + i // 2) for i in range(n_paths - 1)]
    s_final = state_at(scenario, scenario.total_time).s
    positions = np.linspace(0.0, s_final, n_records)
    gains = [GainProcessState(1.0 + 0.0j, rho) for _ in range(n_paths)]
    out = []
    for k, s in enumerate(positions):
        if k > 0:
            gains = [evolve_gain(g, rng) for g in gains]
        phi_a = los_angle_of_position(float(s), scenario.h_c, scenario.h_r)
        paths = [Path(gains[0].alpha, phi_a, math.pi - phi_a)]
        for off, g in zip(offsets, gains[1:]):
            pa = min(max(phi_a + off, 1e-3), math.pi - 1e-3)
            paths.append(Path(reflection_coeff * g.alpha, pa, math.pi - pa))
        out.append(ChannelSnapshot(tuple(paths), k, float(s)))
    return out
