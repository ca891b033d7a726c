import math
import random
import statistics

import pytest

from railmac.kernel import MS
from railmac.workload import (
    DelaySample,
    Frame,
    FrameBuffer,
    HarnessError,
    Metrics,
    av_streaming,
    draw_rate,
    expected_frame_rate,
    next_arrival,
    periodic_a,
    random_c,
    summarize,
    voip,
)


def test_random_c_mean_interval():
    rng = random.Random(5)
    prof = random_c()
    gaps = [next_arrival(prof, rng, 0)[0] for _ in range(100_000)]
    assert min(gaps) >= 100 * MS and max(gaps) <= 1000 * MS
    assert statistics.fmean(gaps) == pytest.approx(550 * MS, rel=0.02)


def test_periodic_and_voip_intervals():
    assert next_arrival(periodic_a(), random.Random(), 7) == (7 + 100 * MS, 32)
    prof = voip()
    rate = draw_rate(prof, random.Random())
    assert next_arrival(prof, random.Random(), 0, rate) == (13_333, 160)


def test_av_rate_draw_is_log_uniform():
    prof = av_streaming()
    rng = random.Random(2)
    rates = [draw_rate(prof, rng) for _ in range(20_000)]
    assert all(prof.rate_min_bps <= r <= prof.rate_max_bps for r in rates)
    geo = math.sqrt(prof.rate_min_bps * prof.rate_max_bps)
    assert statistics.median(rates) == pytest.approx(geo, rel=0.05)


def test_expected_frame_rates():
    assert expected_frame_rate(periodic_a()) == pytest.approx(10.0)
    assert expected_frame_rate(random_c()) == pytest.approx(1 / 0.55)
    assert expected_frame_rate(voip()) == pytest.approx(75.0)


def _metrics():
    m = Metrics()
    m.register("n", "g")
    return m


def test_buffer_drops_oldest_on_overflow():
    m = _metrics()
    buf = FrameBuffer(m, limit=2)
    frames = [Frame("n", "g", t, 32) for t in (0, 1, 2)]
    for f in frames:
        buf.push(f, f.created_at)
    assert m.counters["n"].dropped == 1
    assert buf.head() is frames[1]
    assert frames[1].head_at == 2
    assert len(buf) == 2


def test_double_fulfillment_is_caught():
    m = _metrics()
    f = Frame("n", "g", 0, 32)
    m.created(f)
    m.record_fulfillment(f, 10)
    with pytest.raises(HarnessError):
        m.record_fulfillment(f, 20)
    with pytest.raises(HarnessError):
        m.dropped(f)


def test_fulfillment_before_creation_is_caught():
    m = _metrics()
    with pytest.raises(HarnessError):
        m.record_fulfillment(Frame("n", "g", 50, 32), 40)


def test_delay_parts_add_up():
    s = DelaySample("n", "g", created_at=10, fulfilled_at=100, head_at=30, tx_start=60)
    assert s.queueing_wait + s.access_delay + s.tx_time == s.delay == 90


def test_summary_rounding_warmup_and_p95():
    samples = [DelaySample("n", "g", 0, 999)]  # inside warm-up, ignored
    samples += [DelaySample("n", "g", 100, 100 + d) for d in range(1, 21)]
    samples.append(DelaySample("m", "h", 100, 103))
    samples.append(DelaySample("m", "h", 100, 104))
    st = summarize(samples, warmup_us=100, dropped_by_group={"g": 2, "h": 0})
    g = st.groups["g"]
    assert g.samples == 20 and g.p95_delay_us == 19 and g.dropped == 2
    assert g.mean_delay_us == 10.5 and g.mean_delay_us_rounded == 11
    assert st.groups["h"].mean_delay_us_rounded == 4  # 3.5 rounds half up
    assert st.overall.samples == 22 and st.overall.dropped == 2


def test_empty_group_still_reported():
    st = summarize([], 0, {"g": 3}, ["g"])
    row = st.rows("x", "y")[0]
    assert row == ["x", "y", "g", 0, "", "", 3]


def test_unknown_traffic_kind_rejected():
    from railmac.workload import TrafficProfile

    with pytest.raises(ValueError):
        TrafficProfile("bursty")
    with pytest.raises(ValueError):
        TrafficProfile("periodic")
