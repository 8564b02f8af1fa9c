"""
NR numerology, per-scheme frame plans and overhead / throughput accounting.

A :class:`FramePlan` is laid out as a resource map over one SSB period
(20 ms by default): every resource element of every slot is assigned
exactly one category, so overhead figures are plain counts.

Default layout in each RB (``DDDSU`` pattern, special slot split 10/2/2):

* PDCCH in symbol 0 of every downlink-capable slot;
* DMRS mapping type A at symbol 2 plus one additional at symbol 11, on the
  even subcarriers (type-1 comb); the additional one falls outside the
  special slot's downlink part;
* CSI-RS with one RE per port in symbols 4, 5, 8, 9, subcarriers 0-7;
* SSB blocks of 4 symbols x 240 subcarriers at symbols 4-7 and 8-11, at the
  bottom of the band.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .constants import N_PRB

DATA, SSB, DMRS, CSIRS, CONTROL, GUARD, UPLINK = range(7)
CATEGORY_NAMES = ("data", "ssb", "dmrs", "csirs", "control", "guard", "uplink")

SSB_PERIODS_MS = tuple(5 * 2**k for k in range(6))
CSIRS_PERIODS = (4, 5, 8, 10, 16, 20, 32, 40, 64, 80, 160, 320, 640)
SYMBOLS_PER_SLOT = 14
SSB_SUBCARRIERS = 240
SSB_SYMBOL_BLOCKS = ((4, 5, 6, 7), (8, 9, 10, 11))
CSIRS_SYMBOL_PAIRS = ((4, 5), (8, 9))
DMRS_SYMBOLS = (2, 11)
# Window over which per-RB reference-signal counts are quoted (one DDDSU period).
RS_WINDOW_SLOTS = 5


@dataclass(frozen=True)
class Numerology:
    mu: int
    subcarrier_spacing: float
    slots_per_subframe: int
    symbols_per_slot: int
    avg_symbol_duration: float

    @property
    def slot_duration(self) -> float:
        return 1e-3 / self.slots_per_subframe


def numerology_params(mu: int) -> Numerology:
    """NR numerology ``mu`` (normal cyclic prefix)."""
    if not (isinstance(mu, (int, np.integer)) and 0 <= mu <= 6):
        raise ValueError(f"numerology must be an integer in [0, 6], got {mu}")
    return Numerology(int(mu), 15e3 * 2**mu, 2**mu, SYMBOLS_PER_SLOT, 1e-3 / (SYMBOLS_PER_SLOT * 2**mu))


@dataclass(frozen=True)
class FramePlan:
    """
    Downlink resource plan of one scheme.

    ``ssb_slots`` are slot indices (within each SSB period) carrying
    ``ssbs_per_slot`` SSBs. ``csirs_period_slots`` is ``None`` when CSI-RS is
    not transmitted.
    """

    scheme: str
    mu: int = 3
    slot_pattern: str = "DDDSU"
    special_split: tuple = (10, 2, 2)
    ssb_period_ms: float = 20.0
    ssb_slots: tuple = (1, 2, 6, 7)
    ssbs_per_slot: int = 2
    csirs_period_slots: int | None = 5
    csirs_ports: int = 32
    dmrs_additional: bool = True
    pdcch_symbols: int = 1
    n_prb: int = N_PRB
    csi_feedback: bool = True

    def __post_init__(self):
        if self.scheme not in ("conventional", "isac"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        numerology_params(self.mu)
        if set(self.slot_pattern) - set("DSU"):
            raise ValueError(f"slot pattern {self.slot_pattern!r} uses symbols other than D/S/U")
        if sum(self.special_split) != SYMBOLS_PER_SLOT:
            raise ValueError("special slot split must cover 14 symbols")
        if self.ssb_period_ms not in SSB_PERIODS_MS:
            raise ValueError(f"SSB period {self.ssb_period_ms} ms not in {SSB_PERIODS_MS}")
        if self.csirs_period_slots is not None and self.csirs_period_slots not in CSIRS_PERIODS:
            raise ValueError(f"CSI-RS period {self.csirs_period_slots} not in {CSIRS_PERIODS}")
        if self.scheme == "isac" and (self.csirs_period_slots is not None or self.csi_feedback):
            raise ValueError("the ISAC plan carries no CSI-RS and no CSI feedback")
        if self.csirs_period_slots is None and self.csi_feedback:
            raise ValueError("CSI feedback requires CSI-RS")
        if not 0 < self.csirs_ports <= 32:
            raise ValueError("CSI-RS ports must be in 1..32")
        if self.n_prb * 12 < SSB_SUBCARRIERS:
            raise ValueError("bandwidth narrower than one SSB")
        for s in self.ssb_slots:
            if not 0 <= s < self.slots_per_period:
                raise ValueError(f"SSB slot {s} outside the SSB period")
            if self.slot_type(s) == "U":
                raise ValueError(f"SSB slot {s} is an uplink slot")
            if s in self.csirs_slots:
                raise ValueError(f"SSB slot {s} collides with CSI-RS")

    # -- timing -----------------------------------------------------------

    @property
    def numerology(self) -> Numerology:
        return numerology_params(self.mu)

    @property
    def slots_per_period(self) -> int:
        return int(round(self.ssb_period_ms * 2**self.mu))

    def slot_type(self, slot: int) -> str:
        return self.slot_pattern[slot % len(self.slot_pattern)]

    def downlink_symbols(self, slot: int) -> int:
        kind = self.slot_type(slot)
        return {"D": SYMBOLS_PER_SLOT, "S": self.special_split[0], "U": 0}[kind]

    @cached_property
    def csirs_slots(self) -> tuple:
        """CSI-RS slots within one SSB period (moved forward to the next D slot if needed)."""
        if self.csirs_period_slots is None:
            return ()
        out = []
        for start in range(0, self.slots_per_period, self.csirs_period_slots):
            s = start
            while self.slot_type(s) != "D":
                s += 1
            if s < self.slots_per_period:
                out.append(s)
        return tuple(out)

    def is_ssb_slot(self, slot: int) -> bool:
        return slot % self.slots_per_period in self.ssb_slots

    def is_csirs_slot(self, slot: int) -> bool:
        if self.csirs_period_slots is None:
            return False
        return slot % self.slots_per_period in self.csirs_slots

    @property
    def training_slots(self) -> int:
        """SSB (beam-training / sync) slots per SSB period."""
        return len(self.ssb_slots)

    @property
    def feedback_slots(self) -> tuple:
        """Uplink slots carrying the CSI report of each CSI-RS occasion."""
        if not self.csi_feedback:
            return ()
        out = []
        for s in self.csirs_slots:
            u = s
            while self.slot_type(u) != "U":
                u += 1
            out.append(u)
        return tuple(out)

    # -- resource map -----------------------------------------------------

    @cached_property
    def resource_map(self) -> np.ndarray:
        """Category of each RE, shape ``(slots_per_period, 14, 12 * n_prb)``."""
        n_sc = 12 * self.n_prb
        grid = np.full((self.slots_per_period, SYMBOLS_PER_SLOT, n_sc), DATA, dtype=np.int8)
        sc_in_rb = np.arange(n_sc) % 12
        dl_sym, guard_sym, _ = self.special_split
        csirs_res = [(sym, sc) for pair in CSIRS_SYMBOL_PAIRS for sc in range(8) for sym in pair]
        csirs_res = csirs_res[: self.csirs_ports]
        dmrs_syms = DMRS_SYMBOLS if self.dmrs_additional else DMRS_SYMBOLS[:1]
        for slot in range(self.slots_per_period):
            kind = self.slot_type(slot)
            g = grid[slot]
            if kind == "U":
                g[:] = UPLINK
                continue
            n_dl = self.downlink_symbols(slot)
            if kind == "S":
                g[dl_sym: dl_sym + guard_sym] = GUARD
                g[dl_sym + guard_sym:] = UPLINK
            g[: self.pdcch_symbols] = CONTROL
            for sym in dmrs_syms:
                if sym < n_dl:
                    g[sym, sc_in_rb % 2 == 0] = DMRS
            if slot in self.csirs_slots:
                for sym, sc in csirs_res:
                    g[sym, sc_in_rb == sc] = CSIRS
            if slot in self.ssb_slots:
                for block in SSB_SYMBOL_BLOCKS[: self.ssbs_per_slot]:
                    for sym in block:
                        g[sym, :SSB_SUBCARRIERS] = SSB
        grid.flags.writeable = False
        return grid

    def category_counts(self) -> dict:
        """RE count per category over one SSB period."""
        counts = np.bincount(self.resource_map.ravel(), minlength=len(CATEGORY_NAMES))
        return dict(zip(CATEGORY_NAMES, (int(c) for c in counts)))

    def rs_per_rb_window(self) -> dict:
        """
        DMRS and CSI-RS REs per RB per 5-slot window, averaged over the SSB
        period, in the top RB (clear of SSBs).
        """
        rb = self.resource_map[:, :, -12:]
        n_windows = self.slots_per_period / RS_WINDOW_SLOTS
        return {
            "dmrs": float(np.sum(rb == DMRS) / n_windows),
            "csirs": float(np.sum(rb == CSIRS) / n_windows),
        }

    @property
    def dmrs_re_per_rb_period(self) -> float:
        return self.rs_per_rb_window()["dmrs"]

    @property
    def csirs_re_per_rb_period(self) -> float:
        return self.rs_per_rb_window()["csirs"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["special_split"] = list(self.special_split)
        d["ssb_slots"] = list(self.ssb_slots)
        d["csirs_slots"] = list(self.csirs_slots)
        d["feedback_slots"] = list(self.feedback_slots)
        d["slots_per_period"] = self.slots_per_period
        d["re_counts"] = self.category_counts()
        d["rs_re_per_rb_window"] = self.rs_per_rb_window()
        d["overhead_fraction"] = overhead_fraction(self)
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def build_frame_plan(scheme: str, mu: int = 3, **options) -> FramePlan:
    """
    Connected-mode plan for ``scheme``.

    ``conventional``: 8 SSBs in 4 slots per 20 ms, 32-port CSI-RS every 5
    slots with CSI feedback in the following uplink slot.
    ``isac``: one SSB slot carrying two repeated SSBs, no CSI-RS, no feedback.
    Keyword options override any :class:`FramePlan` field.
    """
    if scheme == "conventional":
        base = dict(ssb_slots=(1, 2, 6, 7), csirs_period_slots=5, csi_feedback=True)
    elif scheme == "isac":
        base = dict(ssb_slots=(1,), csirs_period_slots=None, csi_feedback=False)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    base.update(options)
    return FramePlan(scheme=scheme, mu=mu, **base)


def overhead_fraction(plan: FramePlan) -> float:
    """Non-data share of downlink REs (SSB, DMRS, CSI-RS, control) over one SSB period."""
    c = plan.category_counts()
    dl = c["data"] + c["ssb"] + c["dmrs"] + c["csirs"] + c["control"]
    return (dl - c["data"]) / dl


def overhead_breakdown(plan: FramePlan) -> dict:
    """Per-category share of downlink REs."""
    c = plan.category_counts()
    dl = c["data"] + c["ssb"] + c["dmrs"] + c["csirs"] + c["control"]
    return {k: c[k] / dl for k in ("ssb", "dmrs", "csirs", "control")}


class OverheadMetrics(NamedTuple):
    oh_fraction: float
    rs_reduction_vs: float
    training_reduction_vs: float


def overhead_metrics(plan: FramePlan, baseline: FramePlan | None = None) -> OverheadMetrics:
    """
    Overhead of ``plan`` and its reductions relative to ``baseline``.

    The baseline defaults to the conventional plan at the same numerology.
    Reference-signal reduction compares DMRS + CSI-RS REs per RB per window;
    training reduction compares SSB slot counts per SSB period.
    """
    if baseline is None:
        baseline = build_frame_plan("conventional", plan.mu, n_prb=plan.n_prb)
    rs = plan.rs_per_rb_window()
    rs_ref = baseline.rs_per_rb_window()
    total, total_ref = rs["dmrs"] + rs["csirs"], rs_ref["dmrs"] + rs_ref["csirs"]
    rs_red = (total_ref - total) / total_ref if total_ref else 0.0
    tr_red = (baseline.training_slots - plan.training_slots) / baseline.training_slots
    return OverheadMetrics(overhead_fraction(plan), rs_red, tr_red)


@dataclass(frozen=True)
class ThroughputInputs:
    carriers: int = 1
    layers: int = 1
    bits_per_symbol: int = 4
    prb_count: int = N_PRB
    avg_symbol_duration: float = 1e-3 / (14 * 8)
    ber: float = 0.0
    overhead: float = 0.0


def throughput(inputs: ThroughputInputs) -> float:
    """
    Downlink throughput in Mbps,
    ``1e-6 J N_layers Q_M (12 N_PRB / T_s) (1 - BER - OH)`` floored at zero.
    """
    rate = inputs.layers * inputs.bits_per_symbol * inputs.prb_count * 12 / inputs.avg_symbol_duration
    return 1e-6 * inputs.carriers * rate * max(0.0, 1.0 - inputs.ber - inputs.overhead)


def plan_throughput(plan: FramePlan, ber, layers: int = 1, bits_per_symbol: int = 4):
    """Vectorized throughput of ``plan`` for one or many BER values."""
    oh = overhead_fraction(plan)
    rate = layers * bits_per_symbol * plan.n_prb * 12 / plan.numerology.avg_symbol_duration
    return 1e-6 * rate * np.maximum(0.0, 1.0 - np.asarray(ber, dtype=float) - oh)
