"""Frame structure accounting: per-slot outcomes, SNR gate, average delay."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSnapshot, D_OVER_LAMBDA, observe

SNR_THRESHOLD_DB = 5.0


class UndefinedMetricError(ValueError):
    """Average delay requested for a ledger without successful packets."""


class SlotKind(enum.Enum):
    TRACKING = "tracking"
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class SlotOutcome:
    kind: SlotKind
    slot_index: int
    snr_db: float | None = None


@dataclass(frozen=True)
class DelayLedger:
    total_delay_slots: int = 0
    successful_packets: int = 0
    tracking_slots: int = 0
    failed_slots: int = 0

    @property
    def slots(self) -> int:
        return self.successful_packets + self.tracking_slots + self.failed_slots

    def is_conserved(self) -> bool:
        return self.total_delay_slots == self.slots

    def __add__(self, other: "DelayLedger") -> "DelayLedger":
        return DelayLedger(
            self.total_delay_slots + other.total_delay_slots,
            self.successful_packets + other.successful_packets,
            self.tracking_slots + other.tracking_slots,
            self.failed_slots + other.failed_slots,
        )


def snr_db(power: float, noise_variance: float) -> float:
    if power <= 0.0:
        return -math.inf
    if noise_variance <= 0.0:
        return math.inf
    return 10.0 * math.log10(power / noise_variance)


def packet_success(snapshot: ChannelSnapshot, phi_bar_a: float, phi_bar_d: float,
                   n_r: int, n_t: int, noise_variance: float,
                   rng: np.random.Generator | None = None,
                   threshold_db: float = SNR_THRESHOLD_DB,
                   d_over_lambda: float = D_OVER_LAMBDA) -> tuple[bool, float]:
    """Hard SNR gate on the post-beamforming signal power.

    ``rng`` is accepted for interface symmetry with ``observe``; the
    decision itself is deterministic.
    """
    sig = observe(snapshot, phi_bar_a, phi_bar_d, n_r, n_t, 0.0, None, d_over_lambda)
    power = sig.y_re * sig.y_re + sig.y_im * sig.y_im
    value = snr_db(power, noise_variance)
    return value >= threshold_db, value


def record(ledger: DelayLedger, outcome: SlotOutcome) -> DelayLedger:
    """Every slot adds one slot of delay; the kind picks the counter."""
    if outcome.kind is SlotKind.SUCCESS:
        return replace(ledger, total_delay_slots=ledger.total_delay_slots + 1,
                       successful_packets=ledger.successful_packets + 1)
    if outcome.kind is SlotKind.FAILURE:
        return replace(ledger, total_delay_slots=ledger.total_delay_slots + 1,
                       failed_slots=ledger.failed_slots + 1)
    if outcome.kind is SlotKind.TRACKING:
        return replace(ledger, total_delay_slots=ledger.total_delay_slots + 1,
                       tracking_slots=ledger.tracking_slots + 1)
    raise ValueError(f"unknown slot kind {outcome.kind!r}")


def average_delay_ms(ledger: DelayLedger, slot_duration: float) -> float:
    if ledger.successful_packets <= 0:
        raise UndefinedMetricError("average delay is undefined without successful packets")
    return ledger.total_delay_slots / ledger.successful_packets * slot_duration * 1e3


class LedgerCounter:
    """Mutable tally used inside hot slot loops; freeze with ``ledger()``."""

    __slots__ = ("success", "tracking", "failure")

    def __init__(self):
        self.success = 0
        self.tracking = 0
        self.failure = 0

    def add(self, kind: SlotKind) -> None:
        if kind is SlotKind.SUCCESS:
            self.success += 1
        elif kind is SlotKind.FAILURE:
            self.failure += 1
        else:
            self.tracking += 1

    def ledger(self) -> DelayLedger:
        total = self.success + self.tracking + self.failure
        return DelayLedger(total, self.success, self.tracking, self.failure)
