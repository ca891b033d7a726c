"""Channel and MAC parameter sets shared by the scenario runner and the config loader."""
from __future__ import annotations

import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, NonNegativeInt, PositiveInt, model_validator


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ChannelParams(_Params):
    """Air-time model: a bit rate plus fixed per-frame overheads.

    Low-rate defaults: 250 kbit/s with 6 B PHY + 9 B MAC framing.
    """

    bitrate_bps: PositiveInt = 250_000
    overhead_bytes: int = 15
    phy_overhead_us: int = 0

    def tx_time(self, payload_bytes: int) -> int:
        bits = (payload_bytes + self.overhead_bytes) * 8
        return self.phy_overhead_us + math.ceil(bits * 1_000_000 / self.bitrate_bps)


LOW_RATE_CHANNEL = ChannelParams()
# 802.11ac-like: 40 us VHT preamble, 34 B MAC header + FCS
HIGH_RATE_CHANNEL = ChannelParams(bitrate_bps=650_000_000, overhead_bytes=34, phy_overhead_us=40)


class MacParams(_Params):
    """Backoff-queueing timing and capacity."""

    backoff_slot_us: PositiveInt = 320
    slot_count: PositiveInt = 15
    beacon_interval_us: PositiveInt = 122_880
    beacon_time_us: PositiveInt = 960
    queue_capacity: PositiveInt = 4
    liveness_threshold: PositiveInt = 3
    reserved_safety_slot: int | None = None
    slot_policy: Literal["pack", "spread", "balance"] = "pack"

    @model_validator(mode="after")
    def _fits(self):
        if self.beacon_time_us >= self.beacon_interval_us:
            raise ValueError("beacon_time_us must be shorter than beacon_interval_us")
        if self.reserved_safety_slot is not None and not (
            1 <= self.reserved_safety_slot <= self.slot_count
        ):
            raise ValueError("reserved_safety_slot must name an existing time slot")
        return self

    @property
    def slot_duration_us(self) -> int:
        return (self.beacon_interval_us - self.beacon_time_us) // self.slot_count


class CsmaParams(_Params):
    """Slotted 802.15.4-style CSMA/CA confined to each node's time slot."""

    backoff_slot_us: PositiveInt = 320
    be_min: int = 3
    be_max: int = 5
    max_csma_backoffs: int = 4
    max_frame_retries: int = 3
    beacon_interval_us: PositiveInt = 122_880
    beacon_time_us: PositiveInt = 960
    slot_count: PositiveInt = 15
    queue_capacity: PositiveInt = 4
    ack_turnaround_us: int = 192
    ack_us: int = 352
    ack_wait_us: int = 864
    slot_policy: Literal["pack", "spread", "balance"] = "pack"

    @model_validator(mode="after")
    def _ordered(self):
        if not (0 <= self.be_min <= self.be_max):
            raise ValueError("need 0 <= be_min <= be_max")
        if self.max_csma_backoffs < 0 or self.max_frame_retries < 0:
            raise ValueError("retry limits must be non-negative")
        return self

    @property
    def slot_duration_us(self) -> int:
        return (self.beacon_interval_us - self.beacon_time_us) // self.slot_count


def _is_cw(value: int) -> bool:
    return value > 0 and (value + 1) & value == 0


class DcfParams(_Params):
    """802.11 DCF with per-class contention-window scaling (EDCA-lite)."""

    slot_us: PositiveInt = 20
    cw_min: PositiveInt = 31
    cw_max: PositiveInt = 1023
    sifs_us: PositiveInt = 16
    ack_us: PositiveInt = 44
    cw_scale: dict[str, int] = {"voice": 4, "video": 2, "best_effort": 1}

    @model_validator(mode="after")
    def _cw_shape(self):
        if self.cw_min > self.cw_max:
            raise ValueError("cw_min must not exceed cw_max")
        if not (_is_cw(self.cw_min) and _is_cw(self.cw_max)):
            raise ValueError("contention windows must be of the form 2^k - 1")
        for name, scale in self.cw_scale.items():
            if scale < 1 or scale & (scale - 1):
                raise ValueError(f"cw_scale[{name}] must be a power of two")
        return self

    @property
    def difs_us(self) -> int:
        return self.sifs_us + 2 * self.slot_us

    def class_window(self, access_class: str) -> tuple[int, int]:
        scale = self.cw_scale.get(access_class, 1)
        return (self.cw_min + 1) // scale - 1, (self.cw_max + 1) // scale - 1


class LplParams(_Params):
    """B-MAC-style low-power listening. Defaults are not taken from any measurement."""

    check_interval_us: NonNegativeInt = 100_000
    preamble_us: int | None = None
    backoff_unit_us: PositiveInt = 320
    initial_backoff_slots: PositiveInt = 32
    congestion_backoff_slots: PositiveInt = 16
    cca_vulnerable_us: int = 192
    ack_turnaround_us: int = 192
    ack_us: int = 352
    ack_wait_us: int = 864

    @model_validator(mode="after")
    def _preamble(self):
        if self.preamble_us is not None and self.preamble_us < self.check_interval_us:
            raise ValueError("preamble_us must be at least check_interval_us")
        return self

    @property
    def effective_preamble_us(self) -> int:
        return self.check_interval_us if self.preamble_us is None else self.preamble_us
