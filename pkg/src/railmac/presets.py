"""Preset experiments: the two delay comparisons, the queue walkthrough and the train demo."""
from __future__ import annotations

import csv
import io
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .backoff_queue import BackoffQueue, NodeMacState, trace_line
from .config import (
    NodeGroup,
    ProfileConfig,
    ScenarioConfig,
    SegmentConfig,
    SensorConfig,
    SituationConfig,
    TrackConfig,
    VehicleConfig,
    dump_config,
)
from .params import HIGH_RATE_CHANNEL, LOW_RATE_CHANNEL, CsmaParams, DcfParams, LplParams, MacParams
from .railway import DEFAULT_PROFILES, demo_topology, demo_track
from .scenario import ScenarioResult, run_scenario, situation_text, write_outputs
from .workload import CSV_HEADER, write_csv

PRESETS = ("fig8_low_rate", "fig9_high_rate", "fig7_walkthrough", "situation_demo")
DEFAULT_SEEDS = tuple(range(1, 11))

FIG8_RATIOS = {"1:1:1": (20, 20, 20), "1:1:2": (15, 15, 30), "1:1:4": (10, 10, 40)}
FIG8_SCHEMES = ("csma154", "bmac", "backoff_queue")
# published reference means in ms; None where no value is given
FIG8_REPORTED = {
    ("csma154", "1:1:1"): 112.0, ("bmac", "1:1:1"): 109.2, ("backoff_queue", "1:1:1"): 49.0,
    ("csma154", "1:1:2"): 105.4, ("bmac", "1:1:2"): 57.3, ("backoff_queue", "1:1:2"): None,
    ("csma154", "1:1:4"): 106.5, ("bmac", "1:1:4"): 83.9, ("backoff_queue", "1:1:4"): None,
}
FIG9_COUNTS = (10, 15, 20)
FIG9_SCHEMES = ("dcf", "backoff_queue")
FIG9_REPORTED = {
    ("dcf", 10): 121.7, ("dcf", 15): 132.5, ("dcf", 20): 139.3,
    ("backoff_queue", 10): 15.1, ("backoff_queue", 15): 56.2, ("backoff_queue", 20): 118.2,
}
FIG9_HORIZON_US = 10_000_000
FIG9_WARMUP_US = 1_000_000
HIGH_RATE_QUEUE = 15


# -- config builders ---------------------------------------------------------


def fig8_config(scheme: str, ratio: str, seed: int = 1, horizon_us: int = 60_000_000,
                warmup_us: int = 5_000_000) -> ScenarioConfig:
    a, b, c = FIG8_RATIOS[ratio]
    section = {
        "backoff_queue": MacParams(slot_policy="balance"),
        "csma154": CsmaParams(slot_policy="balance"),
        "bmac": LplParams(),
    }[scheme]
    return ScenarioConfig(
        name=f"fig8/{ratio}/seed{seed}",
        scheme=scheme,
        seed=seed,
        horizon_us=horizon_us,
        warmup_us=warmup_us,
        roster_order="interleaved",
        channel=LOW_RATE_CHANNEL,
        nodes=[
            NodeGroup(group="A", traffic="periodic_a", count=a),
            NodeGroup(group="B", traffic="periodic_b", count=b),
            NodeGroup(group="C", traffic="random_c", count=c),
        ],
        **{scheme: section},
    )


def fig9_config(scheme: str, count: int, seed: int = 1, horizon_us: int = FIG9_HORIZON_US,
                warmup_us: int = FIG9_WARMUP_US) -> ScenarioConfig:
    if scheme == "backoff_queue":
        section = MacParams(
            backoff_slot_us=20,
            queue_capacity=HIGH_RATE_QUEUE,
            slot_count=math.ceil(count / HIGH_RATE_QUEUE),
            beacon_interval_us=102_400,
            beacon_time_us=100,
            slot_policy="balance",
        )
    else:
        section = DcfParams()
    return ScenarioConfig(
        name=f"fig9/{count}/seed{seed}",
        scheme=scheme,
        seed=seed,
        horizon_us=horizon_us,
        warmup_us=warmup_us,
        channel=HIGH_RATE_CHANNEL,
        nodes=[
            NodeGroup(group="voip", traffic="voip", count=1, access_class="voice"),
            NodeGroup(group="video_phone", traffic="video_phone", count=1, access_class="video"),
            NodeGroup(group="av", traffic="av_streaming", count=count - 2),
        ],
        **{scheme: section},
    )


def situation_config(seed: int = 1, horizon_us: int = 90_000_000, safety_gateway: bool = False,
                     dead: tuple[str, ...] = ("v3.interior_humidity",)) -> ScenarioConfig:
    track = demo_track()
    topology = demo_topology(dead=dead)
    return ScenarioConfig(
        name="situation_demo",
        scheme="backoff_queue",
        seed=seed,
        horizon_us=horizon_us,
        warmup_us=0,
        channel=LOW_RATE_CHANNEL,
        backoff_queue=MacParams(reserved_safety_slot=15),
        situation=SituationConfig(
            safety_gateway=safety_gateway,
            track=TrackConfig(
                segments=[
                    SegmentConfig(length_m=s.length_m, curved=s.curved, radius_m=s.radius_m)
                    for s in track.segments
                ],
                tags=list(track.tags),
            ),
            vehicles=[
                VehicleConfig(
                    id=v.vehicle_id,
                    cluster_head=v.cluster_head,
                    sensors=[SensorConfig(id=s.sensor_id, kind=s.sensor_class, healthy=s.healthy)
                             for s in v.sensors],
                )
                for v in topology.vehicles
            ],
            profiles={
                cls: ProfileConfig(
                    base_period_us=p.base_period_us, min_period_us=p.min_period_us,
                    alpha=p.alpha, beta=p.beta, tier=p.tier,
                )
                for cls, p in DEFAULT_PROFILES.items()
            },
        ),
    )


def reference_configs() -> dict[str, ScenarioConfig]:
    """One representative config per network preset, as stored in ``data/``."""
    return {
        "fig8_low_rate": fig8_config("backoff_queue", "1:1:1"),
        "fig9_high_rate": fig9_config("backoff_queue", 10),
        "situation_demo": situation_config(),
    }


# -- the queue walkthrough ------------------------------------------------------


def _walk_queue() -> BackoffQueue:
    q = BackoffQueue(4, 320, LOW_RATE_CHANNEL.tx_time, time_slot=1, strict_ledger=True)
    q.payload_of = lambda node: 32 if node.has_pending_data else 4
    return q


class _Walk:
    def __init__(self):
        self.q = _walk_queue()
        self.t = 0
        self.lines: list[str] = []
        self.nodes: dict[str, NodeMacState] = {}

    def turn(self, arrival: str | None = None):
        if arrival is not None:
            node = NodeMacState(arrival, has_pending_data=True)
            self.nodes[arrival] = node
            self.q.request_admission(node)
        out = self.q.apply(self.q.plan_turn())
        self.lines.append(trace_line(self.t, self.q.time_slot, out, self.q.snapshot()))
        self.t += out.duration
        return out


def walkthrough_enqueue() -> str:
    w = _Walk()
    w.turn("A")
    w.turn("B")
    w.turn()
    return "".join(w.lines)


def walkthrough_dequeue() -> str:
    w = _Walk()
    for name in "ABCD":
        w.turn(name)
    w.nodes["A"].has_pending_data = False
    w.nodes["C"].has_pending_data = False
    w.nodes["D"].has_pending_data = False
    w.q.request_dequeue(w.nodes["B"])
    w.turn()
    w.turn()
    return "".join(w.lines)


def walkthrough_collection() -> str:
    w = _Walk()
    for name in "ABCD":
        w.turn(name)
    w.q.kill("B")
    threshold = w.q.coordinator.liveness_threshold
    for _ in range(threshold):
        w.q.probe_liveness("B")
    for _ in range(w.q.capacity):
        w.turn()
    return "".join(w.lines)


WALKTHROUGHS = {
    "fig7b": walkthrough_enqueue,
    "fig7c": walkthrough_dequeue,
    "fig7d": walkthrough_collection,
}


def stored_vector(name: str) -> str:
    return resources.files("railmac").joinpath("data", f"{name}.tsv").read_text()


# -- matrix running and summaries ---------------------------------------------------


@dataclass
class PointSummary:
    scheme: str
    point: str
    seeds: int
    mean_ms: float | None
    std_ms: float | None
    reported_ms: float | None

    @property
    def band(self) -> str:
        if self.reported_ms is None or self.mean_ms is None:
            return "n/a"
        lo, hi = 0.5 * self.reported_ms, 1.5 * self.reported_ms
        return "matched" if lo <= self.mean_ms <= hi else "diverged"


def _run_point(config: ScenarioConfig):
    result = run_scenario(config)
    return result.rows, result.stats.overall.mean_delay_us


def run_matrix(configs: list[ScenarioConfig], jobs: int = 1) -> list:
    """Run every config; results come back in config order whatever ``jobs`` is."""
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_point, configs))
    return [_run_point(c) for c in configs]


def _summarize(points: list[tuple[str, str, list[float | None], float | None]]) -> list[PointSummary]:
    out = []
    for scheme, point, means, reported in points:
        vals = [m / 1000 for m in means if m is not None]
        mean = statistics.fmean(vals) if vals else None
        std = statistics.stdev(vals) if len(vals) > 1 else (0.0 if vals else None)
        out.append(PointSummary(scheme, point, len(vals), mean, std, reported))
    return out


def summary_table(rows: list[PointSummary]) -> str:
    head = f"{'scheme':<14} {'point':<7} {'mean_ms':>10} {'std_ms':>9} {'reported_ms':>12}  band"
    lines = [head, "-" * len(head)]
    for r in rows:
        mean = "-" if r.mean_ms is None else f"{r.mean_ms:.1f}"
        std = "-" if r.std_ms is None else f"{r.std_ms:.1f}"
        rep = "-" if r.reported_ms is None else f"{r.reported_ms:.1f}"
        lines.append(f"{r.scheme:<14} {r.point:<7} {mean:>10} {std:>9} {rep:>12}  {r.band}")
    return "\n".join(lines) + "\n"


def summary_csv(rows: list[PointSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "point", "seeds", "mean_ms", "std_ms", "reported_ms", "band"])
    for r in rows:
        fmt = lambda v: "" if v is None else f"{v:.3f}"  # noqa: E731
        w.writerow([r.scheme, r.point, r.seeds, fmt(r.mean_ms), fmt(r.std_ms), fmt(r.reported_ms), r.band])
    return buf.getvalue()


def gnuplot_script(title: str, xlabel: str, schemes: tuple[str, ...]) -> str:
    plots = ", \\\n     ".join(
        f"'< grep ^{s}, summary.csv' using 0:4:5:xtic(2) with yerrorlines title '{s}'"
        for s in schemes
    )
    return (
        "set datafile separator ','\n"
        f"set title '{title}'\n"
        f"set xlabel '{xlabel}'\n"
        "set ylabel 'mean delay (ms)'\n"
        "set key top left\n"
        "set terminal pngcairo size 800,500\n"
        "set output 'summary.png'\n"
        f"plot {plots}\n"
    )


@dataclass
class PresetReport:
    preset: str
    summary: list
    table: str
    results_csv: str
    files: dict
    ok: bool = True
    result: ScenarioResult | None = None


def _emit(out_dir: Path | None, files: dict) -> None:
    if out_dir is None:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text)


def fig8_low_rate(out_dir: Path | None = None, seeds=DEFAULT_SEEDS, horizon_us: int = 60_000_000,
                  warmup_us: int = 5_000_000, jobs: int = 1) -> PresetReport:
    configs = [
        fig8_config(scheme, ratio, seed, horizon_us, warmup_us)
        for ratio in FIG8_RATIOS for scheme in FIG8_SCHEMES for seed in seeds
    ]
    results = run_matrix(configs, jobs)
    return _matrix_report(
        "fig8_low_rate", configs, results,
        [(s, r, FIG8_REPORTED[(s, r)]) for r in FIG8_RATIOS for s in FIG8_SCHEMES],
        lambda c: c.name.split("/")[1], out_dir,
        gnuplot_script("low-rate mean delay, 60 nodes", "group ratio A:B:C", FIG8_SCHEMES),
    )


def fig9_high_rate(out_dir: Path | None = None, seeds=DEFAULT_SEEDS, horizon_us: int = FIG9_HORIZON_US,
                   warmup_us: int = FIG9_WARMUP_US, jobs: int = 1) -> PresetReport:
    configs = [
        fig9_config(scheme, n, seed, horizon_us, warmup_us)
        for n in FIG9_COUNTS for scheme in FIG9_SCHEMES for seed in seeds
    ]
    results = run_matrix(configs, jobs)
    return _matrix_report(
        "fig9_high_rate", configs, results,
        [(s, str(n), FIG9_REPORTED[(s, n)]) for n in FIG9_COUNTS for s in FIG9_SCHEMES],
        lambda c: c.name.split("/")[1], out_dir,
        gnuplot_script("high-rate mean delay", "number of nodes", FIG9_SCHEMES),
    )


def _matrix_report(preset, configs, results, points, point_of, out_dir, script) -> PresetReport:
    buf = io.StringIO()
    write_csv([], buf, header=True)
    means: dict = {}
    for config, (rows, mean) in zip(configs, results):
        write_csv(rows, buf, header=False)
        means.setdefault((config.scheme, point_of(config)), []).append(mean)
    summary = _summarize([(s, p, means[(s, p)], rep) for s, p, rep in points])
    table = summary_table(summary)
    files = {
        "results.csv": buf.getvalue(),
        "summary.csv": summary_csv(summary),
        "summary.txt": table,
        "plot.gp": script,
    }
    _emit(out_dir, files)
    return PresetReport(preset, summary, table, buf.getvalue(), files)


def fig7_walkthrough(out_dir: Path | None = None) -> PresetReport:
    files = {}
    lines = []
    ok = True
    for name, fn in WALKTHROUGHS.items():
        trace = fn()
        files[f"{name}.trace.tsv"] = trace
        match = trace == stored_vector(name)
        ok = ok and match
        lines.append(f"{name}: {'match' if match else 'MISMATCH'}")
    table = "\n".join(lines) + "\n"
    files["summary.txt"] = table
    _emit(out_dir, files)
    return PresetReport("fig7_walkthrough", [], table, "", files, ok)


def situation_demo(out_dir: Path | None = None, seed: int = 1, safety_gateway: bool = False) -> PresetReport:
    config = situation_config(seed, safety_gateway=safety_gateway)
    result = run_scenario(config, protocol_trace=True)
    if out_dir is not None:
        write_outputs(result, out_dir, "situation_demo")
    files = {
        "situation_demo.csv": result.csv_text(),
        "situation_demo.trace.tsv": result.protocol_trace,
        "situation_demo.situation.tsv": situation_text(result.situation),
    }
    return PresetReport(
        "situation_demo", [], situation_text(result.situation), result.csv_text(), files,
        result=result,
    )


def run_preset(preset: str, out_dir: Path | None = None, **kwargs) -> PresetReport:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    return globals()[preset](out_dir, **kwargs)


def write_reference_configs(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, config in reference_configs().items():
        (directory / f"{name}.toml").write_text(dump_config(config))


__all__ = ["CSV_HEADER", "PRESETS", "run_preset"]
