"""Extended Kalman and particle filters over the kinematic beam state
x = [alpha_re, alpha_im, s, v, a], beam-correction rule, and the
fixed-interval tracking episode loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .channel import D_OVER_LAMBDA, noise_variance_for_snr, observe
from .link import LedgerCounter, DelayLedger, SlotKind, packet_success
from .scenario import ScenarioConfig, los_angle_of_position, state_at

STATE_DIM = 5
FD_STEP = 1e-6


class SingularUpdateError(np.linalg.LinAlgError):
    """Innovation covariance could not be inverted."""


@dataclass(frozen=True)
class FilterState:
    x: np.ndarray
    P: np.ndarray


@dataclass(frozen=True)
class TransitionModel:
    rho: float = 0.995
    sigma_u2: float = 0.0025
    dt: float = 0.005
    A: np.ndarray = field(init=False, repr=False)
    Q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dt = self.dt
        A = np.zeros((STATE_DIM, STATE_DIM))
        A[0, 0] = A[1, 1] = self.rho
        A[2, 2:] = (1.0, dt, dt * dt / 2.0)
        A[3, 3:] = (1.0, dt)
        A[4, 4] = 1.0
        q = 1.0 - self.rho * self.rho
        Q = np.diag([q, q, self.sigma_u2 * dt * dt / 2.0, self.sigma_u2 * dt, self.sigma_u2])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)


@dataclass(frozen=True)
class PointingState:
    phi_bar: float = 3.0 * math.pi / 4.0
    phi_th: float = 0.125
    last_track_slot: int = 0

    def __post_init__(self):
        if not 0.0 < self.phi_bar < math.pi:
            raise ValueError(f"pointing direction {self.phi_bar} outside (0, pi)")

    @property
    def phi_bar_d(self) -> float:
        return math.pi - self.phi_bar


@dataclass(frozen=True)
class ParticleSet:
    particles: np.ndarray
    weights: np.ndarray
    degenerate: bool = False

    @property
    def P(self) -> int:
        return self.particles.shape[0]


# --- measurement models ----------------------------------------------------

class BeamMeasurement:
    """Noise-free pilot signal for a state, given the current beam pointing."""

    def __init__(self, h_c: float = 200.0, h_r: float = 200.0, n_r: int = 16,
                 n_t: int = 16, d_over_lambda: float = D_OVER_LAMBDA):
        self.h_c = h_c
        self.h_r = h_r
        self.n_r = n_r
        self.n_t = n_t
        self.d = d_over_lambda

    @classmethod
    def for_scenario(cls, cfg: ScenarioConfig, n_r: int, n_t: int) -> "BeamMeasurement":
        return cls(cfg.h_c, cfg.h_r, n_r, n_t)

    def angle(self, s):
        return los_angle_of_position(s, self.h_c, self.h_r)

    def array_gain(self, s: float, pointing: PointingState) -> complex:
        c = math.cos(self.angle(s))
        g_r = kernels.dirichlet(c - math.cos(pointing.phi_bar), self.n_r, self.d)
        g_t = kernels.dirichlet(-c - math.cos(pointing.phi_bar_d), self.n_t, self.d)
        return g_r * g_t.conjugate()

    def __call__(self, x, pointing: PointingState) -> np.ndarray:
        h = complex(x[0], x[1]) * self.array_gain(x[2], pointing)
        return np.array([h.real, h.imag])

    def jacobian(self, x, pointing: PointingState) -> np.ndarray:
        """Analytic in the gain, central difference in s, zero in v and a."""
        g = self.array_gain(x[2], pointing)
        alpha = complex(x[0], x[1])
        dg = (self.array_gain(x[2] + FD_STEP, pointing)
              - self.array_gain(x[2] - FD_STEP, pointing)) / (2.0 * FD_STEP)
        dh_ds = alpha * dg
        H = np.zeros((2, STATE_DIM))
        H[:, 0] = (g.real, g.imag)
        H[:, 1] = (-g.imag, g.real)
        H[:, 2] = (dh_ds.real, dh_ds.imag)
        return H

    def batch(self, particles: np.ndarray, pointing: PointingState) -> tuple[np.ndarray, np.ndarray]:
        c = np.cos(self.angle(particles[:, 2]))
        g_r = kernels.dirichlet_array(c - math.cos(pointing.phi_bar), self.n_r, self.d)
        g_t = kernels.dirichlet_array(-c - math.cos(pointing.phi_bar_d), self.n_t, self.d)
        h = (particles[:, 0] + 1j * particles[:, 1]) * g_r * np.conj(g_t)
        return h.real, h.imag


class LinearMeasurement:
    """h(x) = C x; used to check the filters against a textbook Kalman filter."""

    def __init__(self, C):
        self.C = np.asarray(C, dtype=float)

    def __call__(self, x, pointing=None) -> np.ndarray:
        return self.C @ np.asarray(x)

    def jacobian(self, x, pointing=None) -> np.ndarray:
        return self.C

    def batch(self, particles: np.ndarray, pointing=None):
        h = particles @ self.C.T
        return h[:, 0], h[:, 1]


def measurement(x, pointing: PointingState, geometry: ScenarioConfig,
                n_r: int, n_t: int) -> tuple[float, float]:
    h = BeamMeasurement.for_scenario(geometry, n_r, n_t)(x, pointing)
    return float(h[0]), float(h[1])


# --- EKF -------------------------------------------------------------------

def ekf_predict(fs: FilterState, tm: TransitionModel) -> FilterState:
    A = tm.A
    return FilterState(A @ fs.x, A @ fs.P @ A.T + tm.Q)


def ekf_update(fs: FilterState, z, pointing: PointingState, R_v,
               meas=None) -> FilterState:
    if meas is None:
        meas = BeamMeasurement()
    x, P = fs.x, fs.P
    H = meas.jacobian(x, pointing)
    S = H @ P @ H.T + np.asarray(R_v)
    try:
        if np.linalg.cond(S) > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned")
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise SingularUpdateError(f"innovation covariance not invertible: {exc}") from None
    K = P @ H.T @ S_inv
    innov = np.asarray(z, dtype=float) - meas(x, pointing)
    x_new = x + K @ innov
    P_new = (np.eye(len(x)) - K @ H) @ P
    return FilterState(x_new, 0.5 * (P_new + P_new.T))


# --- PF --------------------------------------------------------------------

def init_particles(x0, P0, n: int, rng: np.random.Generator) -> ParticleSet:
    x0 = np.asarray(x0, dtype=float)
    L = np.linalg.cholesky(np.asarray(P0, dtype=float))
    particles = x0 + rng.standard_normal((n, len(x0))) @ L.T
    return ParticleSet(particles, np.full(n, 1.0 / n))


def pf_propagate(ps: ParticleSet, tm: TransitionModel, rng: np.random.Generator) -> ParticleSet:
    sd = np.sqrt(np.diag(tm.Q))
    noise = rng.standard_normal(ps.particles.shape) * sd
    return ParticleSet(ps.particles @ tm.A.T + noise, ps.weights, ps.degenerate)


def systematic_resample(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    idx = kernels.systematic_resample(ps.weights, float(rng.random()))
    n = ps.P
    return ParticleSet(ps.particles[idx].copy(), np.full(n, 1.0 / n), ps.degenerate)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights)
    return 1.0 / float(np.dot(w, w))


def pf_reweight(ps: ParticleSet, z, pointing, R_v, meas) -> ParticleSet:
    h_re, h_im = meas.batch(ps.particles, pointing)
    var = float(np.asarray(R_v)[0, 0])
    if var > 0:
        logw = kernels.gaussian_logweights(h_re, h_im, float(z[0]), float(z[1]), var)
    else:
        hit = np.hypot(h_re - z[0], h_im - z[1]) <= 1e-12
        logw = np.where(hit, 0.0, -np.inf)
    with np.errstate(divide="ignore"):
        logw = logw + np.log(ps.weights)
    peak = np.max(logw)
    if not np.isfinite(peak):
        n = ps.P
        return ParticleSet(ps.particles, np.full(n, 1.0 / n), True)
    w = np.exp(logw - peak)
    total = w.sum()
    if not (total > 0 and np.isfinite(total)):
        n = ps.P
        return ParticleSet(ps.particles, np.full(n, 1.0 / n), True)
    return ParticleSet(ps.particles, w / total, False)


def pf_step(ps: ParticleSet, tm: TransitionModel, z, pointing, R_v,
            rng: np.random.Generator, meas=None) -> ParticleSet:
    """Propagate, weight by the pilot likelihood, resample when ESS < P/2.

    ``z=None`` performs the propagation only.
    """
    if meas is None:
        meas = BeamMeasurement()
    ps = pf_propagate(ps, tm, rng)
    if z is None:
        return ps
    ps = pf_reweight(ps, z, pointing, R_v, meas)
    if effective_sample_size(ps.weights) < ps.P / 2.0:
        ps = systematic_resample(ps, rng)
    return ps


def estimate(ps: ParticleSet) -> np.ndarray:
    return ps.weights @ ps.particles


# --- beam correction -------------------------------------------------------

def maybe_correct(pointing: PointingState, predicted_phi: float) -> PointingState:
    """Re-point only when the prediction strays strictly beyond ``phi_th``."""
    if abs(predicted_phi - pointing.phi_bar) > pointing.phi_th:
        return replace(pointing, phi_bar=min(max(predicted_phi, 1e-9), math.pi - 1e-9))
    return pointing


# --- episode loop ----------------------------------------------------------

@dataclass
class TrackerParams:
    n_r: int = 16
    n_t: int = 16
    rho: float = 0.995
    sigma_u: float = 0.05
    snr_db: float = 20.0
    threshold_db: float = 5.0
    phi_th: float | None = None
    n_particles: int = 1000
    prior_var: tuple[float, ...] = (0.1, 0.1, 1.0, 1.0, 1.0)
    initial_beam: float = 3.0 * math.pi / 4.0
    correct_between_pilots: bool = True

    def threshold_rad(self) -> float:
        return self.phi_th if self.phi_th is not None else 2.0 / max(self.n_r, self.n_t)

    def noise_variance(self) -> float:
        return noise_variance_for_snr(self.snr_db, self.n_r, self.n_t)


class EkfTracker:
    def __init__(self, x0, P0, tm: TransitionModel, meas, R_v):
        self.fs = FilterState(np.asarray(x0, float), np.asarray(P0, float))
        self.tm, self.meas, self.R_v = tm, meas, R_v

    def predict(self) -> None:
        self.fs = ekf_predict(self.fs, self.tm)

    def update(self, z, pointing) -> None:
        self.fs = ekf_update(self.fs, z, pointing, self.R_v, self.meas)

    @property
    def mean(self) -> np.ndarray:
        return self.fs.x


class PfTracker:
    def __init__(self, x0, P0, tm: TransitionModel, meas, R_v, n: int,
                 rng: np.random.Generator):
        self.ps = init_particles(x0, P0, n, rng)
        self.tm, self.meas, self.R_v, self.rng = tm, meas, R_v, rng
        self.degenerate_events = 0

    def predict(self) -> None:
        self.ps = pf_propagate(self.ps, self.tm, self.rng)

    def update(self, z, pointing) -> None:
        self.ps = pf_reweight(self.ps, z, pointing, self.R_v, self.meas)
        if self.ps.degenerate:
            self.degenerate_events += 1
        if effective_sample_size(self.ps.weights) < self.ps.P / 2.0:
            self.ps = systematic_resample(self.ps, self.rng)

    @property
    def mean(self) -> np.ndarray:
        return estimate(self.ps)


def interval_slots(tracking_interval: float, slot_duration: float) -> int:
    n = tracking_interval / slot_duration
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-6:
        raise ValueError(
            f"tracking interval {tracking_interval} s is not a multiple of the "
            f"{slot_duration} s slot")
    return k


def make_tracker(algo: str, scenario: ScenarioConfig, params: TrackerParams,
                 rng: np.random.Generator, meas=None):
    tm = TransitionModel(params.rho, params.sigma_u ** 2, scenario.slot_duration)
    if meas is None:
        meas = BeamMeasurement.for_scenario(scenario, params.n_r, params.n_t)
    x0 = np.array([1.0, 0.0, 0.0, scenario.initial_velocity, scenario.initial_acceleration])
    P0 = np.diag(params.prior_var)
    R_v = (params.noise_variance() / 2.0) * np.eye(2)
    algo = algo.upper()
    if algo == "EKF":
        return EkfTracker(x0, P0, tm, meas, R_v)
    if algo == "PF":
        return PfTracker(x0, P0, tm, meas, R_v, params.n_particles, rng)
    raise ValueError(f"unknown tracking algorithm {algo!r}")


def run_tracked_episode(algo: str, scenario: ScenarioConfig, channel,
                        tracking_interval: float, params: TrackerParams | None = None,
                        rng: np.random.Generator | None = None,
                        history: list | None = None) -> DelayLedger:
    """Simulate one pass with pilots every ``tracking_interval`` seconds.

    Pilot slots observe the channel at the current pointing and run a
    measurement update; all other slots carry data. If ``history`` is a
    list, per-slot tuples (slot, kind, true_s, est_s, phi_bar) are appended.
    """
    params = params or TrackerParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    every = interval_slots(tracking_interval, scenario.slot_duration)
    tracker = make_tracker(algo, scenario, params, rng)
    meas = tracker.meas
    channel.reset(rng)
    sigma2 = params.noise_variance()
    pointing = PointingState(params.initial_beam, params.threshold_rad(), 0)
    counter = LedgerCounter()
    dt = scenario.slot_duration
    for k in range(scenario.n_slots):
        kin = state_at(scenario, k * dt)
        snap = channel.snapshot(kin, k)
        if k > 0:
            tracker.predict()
        if k % every == 0:
            sig = observe(snap, pointing.phi_bar, pointing.phi_bar_d,
                          params.n_r, params.n_t, sigma2, rng)
            tracker.update((sig.y_re, sig.y_im), pointing)
            pointing = maybe_correct(pointing, float(meas.angle(tracker.mean[2])))
            pointing = replace(pointing, last_track_slot=k)
            kind = SlotKind.TRACKING
        else:
            if params.correct_between_pilots:
                pointing = maybe_correct(pointing, float(meas.angle(tracker.mean[2])))
            ok, _ = packet_success(snap, pointing.phi_bar, pointing.phi_bar_d,
                                   params.n_r, params.n_t, sigma2,
                                   threshold_db=params.threshold_db)
            kind = SlotKind.SUCCESS if ok else SlotKind.FAILURE
        counter.add(kind)
        if history is not None:
            history.append((k, kind, kin.s, float(tracker.mean[2]), pointing.phi_bar))
    return counter.ledger()
