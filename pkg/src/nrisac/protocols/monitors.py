"""Beam-failure monitors: the RSRP instance counter and the kinematic jump detector."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..constants import (BFD_TIMER, BFI_MAX, PERSIST_SLOTS, PERSIST_WINDOW, RANGE_JUMP_THRESHOLD,
                         SLOT_DURATION, SPEED_JUMP_THRESHOLD)


@dataclass(frozen=True)
class SlotObservation:
    """
    Monitor input of one slot: the linear L1-RSRP of a CSI-RS occasion, or
    the range and speed jumps of an ISAC measurement against the prediction.
    """

    slot: int
    rsrp: float | None = None
    range_jump: float | None = None
    speed_jump: float | None = None


@dataclass
class BfiCounter:
    """
    Beam-failure-instance counter with a detection timer.

    The timer starts at the first instance; when it runs out before the
    count reaches ``max_count`` the counter is cleared.
    """

    timer_limit_slots: int = int(round(BFD_TIMER / SLOT_DURATION))
    max_count: int = BFI_MAX
    count: int = 0
    timer_start: int | None = None

    def __post_init__(self):
        if self.timer_limit_slots < 1 or self.max_count < 1:
            raise ValueError("timer and maximum count must be positive")

    def step(self, slot: int, instance: bool) -> bool:
        """Register one monitoring occasion; returns True when failure is declared."""
        if self.timer_start is not None and slot - self.timer_start >= self.timer_limit_slots:
            self.count, self.timer_start = 0, None
        if not instance:
            return False
        if self.timer_start is None:
            self.timer_start = slot
        self.count = min(self.count + 1, self.max_count)
        return self.count >= self.max_count

    def reset(self):
        self.count, self.timer_start = 0, None


@dataclass
class KinematicMonitor:
    """
    Flags slots whose measured range and speed both jump away from the
    one-step prediction; failure when ``persist_slots`` flags fall within
    the last ``window_slots`` slots.
    """

    dr_threshold: float = RANGE_JUMP_THRESHOLD
    dv_threshold: float = SPEED_JUMP_THRESHOLD
    persist_slots: int = PERSIST_SLOTS
    window_slots: int = PERSIST_WINDOW
    consecutive_hits: int = 0
    history: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.dr_threshold <= 0 or self.dv_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if not 0 < self.persist_slots <= self.window_slots:
            raise ValueError("need 0 < persist_slots <= window_slots")
        self.history = deque(self.history, maxlen=self.window_slots)

    def is_hit(self, range_jump: float, speed_jump: float) -> bool:
        return abs(range_jump) > self.dr_threshold and abs(speed_jump) > self.dv_threshold

    def update(self, hit: bool) -> bool:
        """Record one slot; returns True when failure is declared."""
        self.history.append(bool(hit))
        self.consecutive_hits = self.consecutive_hits + 1 if hit else 0
        return sum(self.history) >= self.persist_slots

    def reset(self):
        self.history.clear()
        self.consecutive_hits = 0
