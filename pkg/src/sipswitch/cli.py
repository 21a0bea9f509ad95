"""Experiment runner: config loading, seeded repetition sweeps, aggregation,
and delimited-text export of every series and table."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import multiprocessing
import statistics
import sys
from copy import deepcopy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from . import __version__
from .core import (
    CODEC_PRESETS,
    DL,
    UL,
    Address,
    CodecProfile,
    IfaceState,
    InterfaceDescriptor,
    InternalInvariantError,
    SimulationError,
    Technology,
    ms_to_us,
    s_to_us,
    validate_codec,
)
from .handoff import HandoffProcedure
from .metrics import (
    EModelParams,
    WindowMetrics,
    call_summary,
    window_series,
    write_metrics,
)
from .scenario import MEDIA_PORT, CallSpec, LinkParams, run_call
from .sip import SignalingConfig
from .traffic import read_trace, write_trace


class ConfigError(SimulationError):
    """Invalid experiment configuration; carries every violation found."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class InterfaceSettings:
    technology: str
    q_weight: float
    link: LinkParams


@dataclass
class ExperimentConfig:
    scenario: str
    codecs: list[str]
    procedures: list[str]
    directions: list[str]
    interfaces: dict[str, InterfaceSettings]
    codec_profiles: dict[str, CodecProfile]
    call_duration_s: float
    switch_time_s: float
    switch_jitter_s: float
    window_len_ms: float
    stride_ms: Optional[float]
    repetitions: int
    base_seed: int
    out_dir: str
    header_overhead_bytes: int
    use_burst_ratio: bool
    watchdog_s: float
    log_events: bool
    signaling: SignalingConfig
    emodel: EModelParams


# Baseline settings; the campaign-A preset equals them apart from its name.
_BASE: dict[str, Any] = {
    "scenario": "custom",
    "codecs": ["G711", "G729", "G723.1"],
    "procedures": ["hard", "hybrid", "soft"],
    "directions": ["wlan-to-cellular", "cellular-to-wlan"],
    "interfaces": {
        "wlan": {
            "technology": "wlan-like",
            "q_weight": 0.5,
            "bitrate_kbps": 54000,
            "prop_delay_ms": 5,
            "queue_capacity_pkts": 50,
            "loss_prob": 0.0,
        },
        "cellular": {
            "technology": "cellular-like",
            "q_weight": 0.9,
            "bitrate_kbps": 384,
            "prop_delay_ms": [40, 80],
            "queue_capacity_pkts": 50,
            "loss_prob": 0.0,
        },
    },
    "custom_codecs": {},
    "call_duration_s": 60.0,
    "switch_time_s": 30.0,
    "switch_jitter_s": 0.0,
    "window_len_ms": 60.0,
    "stride_ms": None,
    "repetitions": 50,
    "base_seed": 1,
    "out_dir": "out",
    "header_overhead_bytes": 40,
    "use_burst_ratio": True,
    "watchdog_s": 10.0,
    "log_events": False,
    "signaling": {},
    "emodel": {},
}

PRESETS: dict[str, dict[str, Any]] = {
    # Clean heterogeneous links, all codecs, both switch directions.
    "campaign-A": {
        "scenario": "campaign-A",
    },
    # Cellular link capped at 64 kbps; G711 excluded (over capacity);
    # switching toward the wide WLAN link only.
    "campaign-B": {
        "scenario": "campaign-B",
        "codecs": ["G729", "G723.1"],
        "directions": ["cellular-to-wlan"],
        "interfaces": {"cellular": {"bitrate_kbps": 64}},
    },
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = deepcopy(value)
    return out


def _check_number(raw: dict, key: str, bad: list[str], minimum=None,
                  maximum=None, strict_min: bool = False) -> None:
    value = raw.get(key)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        bad.append(f"{key}: expected a number, got {value!r}")
        return
    if minimum is not None and (value <= minimum if strict_min
                                else value < minimum):
        op = ">" if strict_min else ">="
        bad.append(f"{key}: must be {op} {minimum}, got {value}")
    if maximum is not None and value > maximum:
        bad.append(f"{key}: must be <= {maximum}, got {value}")


def _parse_prop_delay(value, field: str, bad: list[str]):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if value < 0:
            bad.append(f"{field}: delay must be non-negative")
            return 0
        return ms_to_us(value)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool)
            for v in value):
        lo, hi = value
        if lo < 0 or lo > hi:
            bad.append(f"{field}: need 0 <= low <= high, got {value}")
            return 0
        return (ms_to_us(lo), ms_to_us(hi))
    bad.append(f"{field}: expected a number or [low, high] in ms, got {value!r}")
    return 0


def load_config(path: str, preset: Optional[str] = None,
                overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    """Read, merge (defaults <- preset <- file <- overrides), and validate.

    Raises ConfigError listing every violation found.
    """
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError([f"{path}: file not found"])
    try:
        raw = yaml.safe_load(file_path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: parse error: {exc}"])
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])

    preset_name = preset or raw.pop("preset", None)
    if preset_name is not None and preset_name not in PRESETS:
        raise ConfigError([
            f"preset: unknown preset {preset_name!r}; "
            f"known: {', '.join(sorted(PRESETS))}"])

    merged = _BASE
    if preset_name:
        merged = _deep_merge(merged, PRESETS[preset_name])
    merged = _deep_merge(merged, raw)
    if overrides:
        merged = _deep_merge(merged, {k: v for k, v in overrides.items()
                                      if v is not None})
    return _validate_settings(merged)


def _validate_settings(raw: dict[str, Any]) -> ExperimentConfig:
    bad: list[str] = []
    unknown = set(raw) - set(_BASE)
    for key in sorted(unknown):
        bad.append(f"{key}: unknown setting")

    codec_profiles = dict(CODEC_PRESETS)
    custom = raw.get("custom_codecs") or {}
    if not isinstance(custom, dict):
        bad.append("custom_codecs: expected a mapping of name to profile")
        custom = {}
    for name, fields in custom.items():
        try:
            profile = CodecProfile(name=name, **fields)
        except (TypeError, ValueError) as exc:
            bad.append(f"custom_codecs.{name}: {exc}")
            continue
        for violation in validate_codec(profile):
            bad.append(f"custom_codecs.{name}: {violation}")
        codec_profiles[name] = profile

    codecs = raw.get("codecs")
    if isinstance(codecs, str):
        codecs = [codecs]
    if not isinstance(codecs, list) or not codecs:
        bad.append("codecs: expected a non-empty list of codec names")
        codecs = []
    for name in codecs:
        if name not in codec_profiles:
            bad.append(f"codecs: unknown codec {name!r}; known: "
                       f"{', '.join(sorted(codec_profiles))}")

    procedures = raw.get("procedures")
    if isinstance(procedures, str):
        procedures = [procedures]
    if not isinstance(procedures, list) or not procedures:
        bad.append("procedures: expected a non-empty list")
        procedures = []
    known_procs = {p.value for p in HandoffProcedure}
    for name in procedures:
        if name not in known_procs:
            bad.append(f"procedures: unknown procedure {name!r}; known: "
                       f"{', '.join(sorted(known_procs))}")

    interfaces: dict[str, InterfaceSettings] = {}
    raw_ifaces = raw.get("interfaces")
    if not isinstance(raw_ifaces, dict) or len(raw_ifaces) < 2:
        bad.append("interfaces: need a mapping with at least two interfaces")
        raw_ifaces = {}
    known_tech = {t.value for t in Technology}
    for iface_id, fields in raw_ifaces.items():
        if not isinstance(fields, dict):
            bad.append(f"interfaces.{iface_id}: expected a mapping")
            continue
        tech = fields.get("technology")
        if tech not in known_tech:
            bad.append(f"interfaces.{iface_id}.technology: unknown "
                       f"{tech!r}; known: {', '.join(sorted(known_tech))}")
            tech = "wired"
        q = fields.get("q_weight")
        if not isinstance(q, (int, float)) or isinstance(q, bool) \
                or not 0.0 <= q <= 1.0:
            bad.append(f"interfaces.{iface_id}.q_weight: must be a number "
                       f"in [0, 1], got {q!r}")
            q = 0.0
        bitrate = fields.get("bitrate_kbps")
        if bitrate is not None and (
                not isinstance(bitrate, (int, float))
                or isinstance(bitrate, bool) or bitrate <= 0):
            bad.append(f"interfaces.{iface_id}.bitrate_kbps: must be a "
                       f"positive number or null, got {bitrate!r}")
            bitrate = None
        prop = _parse_prop_delay(fields.get("prop_delay_ms", 0),
                                 f"interfaces.{iface_id}.prop_delay_ms", bad)
        queue = fields.get("queue_capacity_pkts", 50)
        if not isinstance(queue, int) or isinstance(queue, bool) or queue < 1:
            bad.append(f"interfaces.{iface_id}.queue_capacity_pkts: must be "
                       f"an integer >= 1, got {queue!r}")
            queue = 1
        loss = fields.get("loss_prob", 0.0)
        if not isinstance(loss, (int, float)) or isinstance(loss, bool) \
                or not 0.0 <= loss <= 1.0:
            bad.append(f"interfaces.{iface_id}.loss_prob: must be in [0, 1], "
                       f"got {loss!r}")
            loss = 0.0
        interfaces[iface_id] = InterfaceSettings(
            technology=tech, q_weight=float(q),
            link=LinkParams(bitrate_kbps=bitrate, prop_delay_us=prop,
                            queue_capacity_pkts=queue, loss_prob=float(loss)))

    directions = raw.get("directions")
    if isinstance(directions, str):
        directions = [directions]
    if not isinstance(directions, list) or not directions:
        bad.append("directions: expected a non-empty list like "
                   "['wlan-to-cellular']")
        directions = []
    for direction in directions:
        parts = str(direction).split("-to-")
        if len(parts) != 2 or not all(parts):
            bad.append(f"directions: {direction!r} is not of the form "
                       f"'<from>-to-<to>'")
        else:
            for iface_id in parts:
                if raw_ifaces and iface_id not in interfaces:
                    bad.append(f"directions: {direction!r} references "
                               f"unknown interface {iface_id!r}")
            if parts[0] == parts[1]:
                bad.append(f"directions: {direction!r} switches an "
                           f"interface to itself")

    _check_number(raw, "call_duration_s", bad, minimum=0, strict_min=True)
    _check_number(raw, "switch_time_s", bad, minimum=0, strict_min=True)
    _check_number(raw, "switch_jitter_s", bad, minimum=0)
    _check_number(raw, "window_len_ms", bad, minimum=0, strict_min=True)
    if raw.get("stride_ms") is not None:
        _check_number(raw, "stride_ms", bad, minimum=0, strict_min=True)
    _check_number(raw, "watchdog_s", bad, minimum=0, strict_min=True)
    _check_number(raw, "header_overhead_bytes", bad, minimum=0)
    reps = raw.get("repetitions")
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        bad.append(f"repetitions: must be an integer >= 1, got {reps!r}")
        reps = 1
    seed = raw.get("base_seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        bad.append(f"base_seed: must be an integer, got {seed!r}")
        seed = 0
    if isinstance(raw.get("call_duration_s"), (int, float)) and \
            isinstance(raw.get("switch_time_s"), (int, float)):
        if not raw["switch_time_s"] < raw["call_duration_s"]:
            bad.append(
                f"switch_time_s: must be before call_duration_s "
                f"({raw['switch_time_s']} >= {raw['call_duration_s']})")
    for key, cls in (("signaling", SignalingConfig), ("emodel", EModelParams)):
        section = raw.get(key) or {}
        if not isinstance(section, dict):
            bad.append(f"{key}: expected a mapping")
            raw[key] = {}
            continue
        allowed = {f.name for f in dataclasses.fields(cls)}
        for sub in sorted(set(section) - allowed):
            bad.append(f"{key}.{sub}: unknown setting")
    for key in ("use_burst_ratio", "log_events"):
        if not isinstance(raw.get(key), bool):
            bad.append(f"{key}: expected true/false, got {raw.get(key)!r}")

    signaling = emodel = None
    if not bad:
        try:
            signaling = SignalingConfig(**raw["signaling"])
        except (TypeError, ValueError) as exc:
            bad.append(f"signaling: {exc}")
        try:
            emodel = EModelParams(**raw["emodel"])
        except (TypeError, ValueError) as exc:
            bad.append(f"emodel: {exc}")
    if bad:
        raise ConfigError(bad)

    return ExperimentConfig(
        scenario=str(raw["scenario"]), codecs=list(codecs),
        procedures=list(procedures), directions=list(directions),
        interfaces=interfaces, codec_profiles=codec_profiles,
        call_duration_s=float(raw["call_duration_s"]),
        switch_time_s=float(raw["switch_time_s"]),
        switch_jitter_s=float(raw["switch_jitter_s"]),
        window_len_ms=float(raw["window_len_ms"]),
        stride_ms=(None if raw["stride_ms"] is None
                   else float(raw["stride_ms"])),
        repetitions=reps, base_seed=seed, out_dir=str(raw["out_dir"]),
        header_overhead_bytes=int(raw["header_overhead_bytes"]),
        use_burst_ratio=raw["use_burst_ratio"],
        watchdog_s=float(raw["watchdog_s"]), log_events=raw["log_events"],
        signaling=signaling, emodel=emodel)


def capacity_warnings(config: ExperimentConfig) -> list[str]:
    """Codec-over-link capacity checks for every interface media can use."""
    used = set()
    for direction in config.directions:
        used.update(direction.split("-to-"))
    warnings = []
    for codec_name in config.codecs:
        codec = config.codec_profiles[codec_name]
        ip_kbps = ((codec.payload_bytes + config.header_overhead_bytes) * 8
                   / codec.packet_interval_ms)
        for iface_id in sorted(used):
            link = config.interfaces[iface_id].link
            if link.bitrate_kbps is not None and ip_kbps > link.bitrate_kbps:
                warnings.append(
                    f"over-capacity: {codec_name} needs {ip_kbps:.1f} kbps "
                    f"at IP level but interface {iface_id!r} carries "
                    f"{link.bitrate_kbps:g} kbps; expect sustained "
                    f"queue-overflow loss")
    return warnings


def build_call_spec(config: ExperimentConfig, codec_name: str,
                    procedure: str, direction: str, rep_idx: int) -> CallSpec:
    """The exact CallSpec the campaign runner uses for one repetition."""
    switch_from, switch_to = direction.split("-to-")
    interfaces = [
        InterfaceDescriptor(
            iface_id=iface_id, technology=Technology(settings.technology),
            address=Address("mn", iface_id, MEDIA_PORT),
            q_weight=settings.q_weight, state=IfaceState.UP)
        for iface_id, settings in config.interfaces.items()
    ]
    links = {iface_id: settings.link
             for iface_id, settings in config.interfaces.items()}
    run_id = f"{codec_name}_{procedure}_{direction}_r{rep_idx:03d}"
    return CallSpec(
        codec=config.codec_profiles[codec_name],
        procedure=HandoffProcedure(procedure),
        switch_from=switch_from, switch_to=switch_to,
        interfaces=interfaces, links=links,
        call_duration_us=s_to_us(config.call_duration_s),
        switch_offset_us=s_to_us(config.switch_time_s),
        switch_jitter_us=s_to_us(config.switch_jitter_s),
        header_overhead_bytes=config.header_overhead_bytes,
        signaling=config.signaling,
        watchdog_us=s_to_us(config.watchdog_s),
        seed=config.base_seed + rep_idx, run_id=run_id,
        log_events=config.log_events)


@dataclass
class AggregateSeries:
    """Elementwise mean and sample standard deviation across repetitions."""

    window_starts: list[int]
    means: dict[str, list[float]]
    stds: dict[str, list[float]]


AGGREGATE_FIELDS = ("mean_delay_ms", "ppl", "burst_r", "r_factor")


def aggregate(series_list: list[list[WindowMetrics]]) -> AggregateSeries:
    if not series_list:
        raise SimulationError("nothing to aggregate")
    grids = {tuple(m.window_start for m in series) for series in series_list}
    if len(grids) != 1:
        raise SimulationError(
            f"mismatched window grids across runs ({len(grids)} distinct)")
    starts = list(grids.pop())
    means: dict[str, list[float]] = {f: [] for f in AGGREGATE_FIELDS}
    stds: dict[str, list[float]] = {f: [] for f in AGGREGATE_FIELDS}
    for idx in range(len(starts)):
        for fname in AGGREGATE_FIELDS:
            values = [getattr(series[idx], fname) for series in series_list]
            means[fname].append(statistics.fmean(values))
            stds[fname].append(statistics.stdev(values)
                               if len(values) > 1 else 0.0)
    return AggregateSeries(window_starts=starts, means=means, stds=stds)


def write_aggregate(path: Path, agg: AggregateSeries) -> None:
    header = ["window_start_us"]
    for fname in AGGREGATE_FIELDS:
        header += [f"{fname}_mean", f"{fname}_std"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for idx, start in enumerate(agg.window_starts):
            row: list = [start]
            for fname in AGGREGATE_FIELDS:
                row += [agg.means[fname][idx], agg.stds[fname][idx]]
            w.writerow(row)


def _run_one(task: tuple) -> dict:
    """Execute one repetition and write its artifacts; returns the pieces
    the aggregation step needs. Module-level for multiprocessing."""
    spec, run_dir_str, window_len_ms, stride_ms, emodel, use_burst = task
    run_dir = Path(run_dir_str)
    run_dir.mkdir(parents=True, exist_ok=True)
    result = run_call(spec)
    write_trace(str(run_dir / "trace.csv"), spec.run_id, result.trace)
    (run_dir / "signaling.log").write_text(
        "\n".join(result.signaling.lines) + "\n" if result.signaling.lines
        else "")
    (run_dir / "handoff.log").write_text(
        "\n".join(result.handoff_log.lines) + "\n"
        if result.handoff_log.lines else "")
    if spec.log_events:
        (run_dir / "events.log").write_text(
            "\n".join(result.event_log) + "\n" if result.event_log else "")

    out: dict[str, Any] = {
        "run_id": spec.run_id, "seed": spec.seed, "aborted": result.aborted,
        "abort_reason": result.abort_reason, "series": {}, "summary": {},
        "switch_window": {},
    }
    for direction, name in ((UL, "ul"), (DL, "dl")):
        series = window_series(result.trace, direction, spec.codec,
                               window_len_ms, stride_ms, emodel, use_burst)
        write_metrics(str(run_dir / f"metrics_{name}.csv"), spec.run_id,
                      series)
        out["series"][name] = series
        if any(r[1] == direction for r in result.trace.rows):
            out["summary"][name] = call_summary(
                result.trace, direction, spec.codec, emodel, use_burst)
        else:
            out["summary"][name] = None
        if result.t_trigger is not None and result.t_completed is not None:
            lo, hi = result.t_trigger, result.t_completed
            rows = [r for r in result.trace.rows
                    if r[1] == direction and lo <= r[3] <= hi]
            out["switch_window"][name] = {
                "generated": len(rows),
                "lost": sum(1 for r in rows if r[6] is not None),
            }
        else:
            out["switch_window"][name] = None
    return out


LOSS_SUMMARY_COLUMNS = (
    "cell_id", "codec", "procedure", "switch_direction", "media_direction",
    "repetitions", "aborted_runs", "mean_lost_packets", "std_lost_packets",
    "mean_loss_pct_whole_call", "mean_loss_pct_switch_window")


def run_campaign(config: ExperimentConfig,
                 parallel: int = 1) -> tuple[Path, int]:
    """Run every (codec x procedure x direction) cell; returns the output
    directory and the number of aborted runs."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    warnings = capacity_warnings(config)
    for line in warnings:
        print(f"warning: {line}", file=sys.stderr)

    cells = [(codec, proc, direction)
             for codec in config.codecs
             for proc in config.procedures
             for direction in config.directions]
    tasks = []
    task_meta = []
    for codec, proc, direction in cells:
        cell_id = f"{codec}_{proc}_{direction}"
        for rep in range(config.repetitions):
            spec = build_call_spec(config, codec, proc, direction, rep)
            run_dir = out_dir / cell_id / f"r{rep:03d}"
            tasks.append((spec, str(run_dir), config.window_len_ms,
                          config.stride_ms, config.emodel,
                          config.use_burst_ratio))
            task_meta.append((cell_id, codec, proc, direction))

    if parallel > 1:
        with multiprocessing.Pool(parallel) as pool:
            results = pool.map(_run_one, tasks)
    else:
        results = [_run_one(task) for task in tasks]

    by_cell: dict[str, list[dict]] = {}
    for meta, res in zip(task_meta, results):
        by_cell.setdefault(meta[0], []).append(res)

    aborted_total = 0
    loss_rows = []
    manifest_cells = []
    for codec, proc, direction in cells:
        cell_id = f"{codec}_{proc}_{direction}"
        runs = by_cell[cell_id]
        good = [r for r in runs if not r["aborted"]]
        aborted = [r for r in runs if r["aborted"]]
        aborted_total += len(aborted)
        if aborted:
            warnings.append(
                f"{cell_id}: {len(aborted)} aborted run(s): "
                + ", ".join(f"{r['run_id']} ({r['abort_reason']})"
                            for r in aborted))
        for name in ("ul", "dl"):
            if good:
                agg = aggregate([r["series"][name] for r in good])
                write_aggregate(out_dir / cell_id / f"aggregate_{name}.csv",
                                agg)
                lost = [r["summary"][name].lost for r in good]
                pct_call = [100.0 * r["summary"][name].ppl for r in good]
                pct_switch = []
                for r in good:
                    sw = r["switch_window"][name]
                    if sw and sw["generated"]:
                        pct_switch.append(100.0 * sw["lost"]
                                          / sw["generated"])
                loss_rows.append((
                    cell_id, codec, proc, direction, name.upper(), len(good),
                    len(aborted), statistics.fmean(lost),
                    statistics.stdev(lost) if len(lost) > 1 else 0.0,
                    statistics.fmean(pct_call),
                    statistics.fmean(pct_switch) if pct_switch else 0.0))
        manifest_cells.append({
            "cell_id": cell_id, "codec": codec, "procedure": proc,
            "direction": direction,
            "runs": [{"run_id": r["run_id"], "seed": r["seed"],
                      "aborted": r["aborted"],
                      "abort_reason": r["abort_reason"]} for r in runs],
        })

    with open(out_dir / "loss_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_SUMMARY_COLUMNS)
        w.writerows(loss_rows)

    manifest = {
        "artifact_version": __version__,
        "scenario": config.scenario,
        "settings": _config_as_dict(config),
        "cells": manifest_cells,
        "warnings": warnings,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir, aborted_total


def _config_as_dict(config: ExperimentConfig) -> dict:
    return {
        "scenario": config.scenario,
        "codecs": config.codecs,
        "procedures": config.procedures,
        "directions": config.directions,
        "interfaces": {
            iface_id: {
                "technology": s.technology, "q_weight": s.q_weight,
                "bitrate_kbps": s.link.bitrate_kbps,
                "prop_delay_us": list(s.link.prop_delay_us)
                if isinstance(s.link.prop_delay_us, tuple)
                else s.link.prop_delay_us,
                "queue_capacity_pkts": s.link.queue_capacity_pkts,
                "loss_prob": s.link.loss_prob,
            } for iface_id, s in config.interfaces.items()
        },
        "codec_profiles": {
            name: dataclasses.asdict(profile)
            for name, profile in config.codec_profiles.items()
        },
        "call_duration_s": config.call_duration_s,
        "switch_time_s": config.switch_time_s,
        "switch_jitter_s": config.switch_jitter_s,
        "window_len_ms": config.window_len_ms,
        "stride_ms": config.stride_ms,
        "repetitions": config.repetitions,
        "base_seed": config.base_seed,
        "out_dir": config.out_dir,
        "header_overhead_bytes": config.header_overhead_bytes,
        "use_burst_ratio": config.use_burst_ratio,
        "watchdog_s": config.watchdog_s,
        "log_events": config.log_events,
        "signaling": dataclasses.asdict(config.signaling),
        "emodel": dataclasses.asdict(config.emodel),
    }


def _find_manifest(trace_path: Path) -> Optional[Path]:
    for parent in trace_path.resolve().parents:
        candidate = parent / "manifest.json"
        if candidate.is_file():
            return candidate
    return None


def recompute_metrics(trace_file: str,
                      manifest_path: Optional[str] = None) -> list[Path]:
    """Re-derive both metric files from an exported trace.

    The codec, window, and model parameters come from the campaign manifest
    (found in a parent directory unless given explicitly).
    """
    trace_path = Path(trace_file)
    if not trace_path.is_file():
        raise ConfigError([f"{trace_file}: file not found"])
    manifest_file = (Path(manifest_path) if manifest_path
                     else _find_manifest(trace_path))
    if manifest_file is None or not manifest_file.is_file():
        raise ConfigError(
            [f"{trace_file}: no manifest.json found in parent directories; "
             f"pass --manifest"])
    manifest = json.loads(manifest_file.read_text())
    run_id, trace = read_trace(str(trace_path))

    codec_name = None
    for cell in manifest.get("cells", []):
        if any(r["run_id"] == run_id for r in cell.get("runs", [])):
            codec_name = cell["codec"]
            break
    if codec_name is None:
        raise ConfigError(
            [f"{trace_file}: run id {run_id!r} not found in "
             f"{manifest_file}"])
    settings = manifest["settings"]
    codec = CodecProfile(**settings["codec_profiles"][codec_name])
    emodel = EModelParams(**settings["emodel"])

    written = []
    for direction, name in ((UL, "ul"), (DL, "dl")):
        series = window_series(trace, direction, codec,
                               settings["window_len_ms"],
                               settings["stride_ms"], emodel,
                               settings["use_burst_ratio"])
        out_path = trace_path.parent / f"recomputed_metrics_{name}.csv"
        write_metrics(str(out_path), run_id, series)
        written.append(out_path)
    return written


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sipswitch",
        description="Simulate SIP-managed interface switching for a "
                    "multihomed VoIP node and export quality metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a measurement campaign")
    run_p.add_argument("config", help="YAML config path")
    run_p.add_argument("--preset", choices=sorted(PRESETS),
                       help="start from a built-in scenario preset")
    run_p.add_argument("--seed", type=int, help="override base_seed")
    run_p.add_argument("--reps", type=int, help="override repetitions")
    run_p.add_argument("--out", help="override output directory")
    run_p.add_argument("--parallel", type=int, default=1,
                       help="worker processes (runs are independent)")

    val_p = sub.add_parser("validate", help="check a config and exit")
    val_p.add_argument("config")
    val_p.add_argument("--preset", choices=sorted(PRESETS))

    rec_p = sub.add_parser("recompute-metrics",
                           help="re-derive metrics from an exported trace")
    rec_p.add_argument("trace")
    rec_p.add_argument("--manifest", help="manifest.json path (default: "
                                          "search parent directories)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            overrides = {"base_seed": args.seed, "repetitions": args.reps,
                         "out_dir": args.out}
            config = load_config(args.config, preset=args.preset,
                                 overrides=overrides)
            out_dir, aborted = run_campaign(config, parallel=args.parallel)
            print(f"campaign {config.scenario!r} complete: "
                  f"outputs in {out_dir}")
            if aborted:
                print(f"{aborted} run(s) aborted; see manifest.json",
                      file=sys.stderr)
                return 2
            return 0
        if args.command == "validate":
            config = load_config(args.config, preset=args.preset)
            cells = (len(config.codecs) * len(config.procedures)
                     * len(config.directions))
            print(f"ok: scenario {config.scenario!r}, {cells} cell(s) x "
                  f"{config.repetitions} repetition(s)")
            for line in capacity_warnings(config):
                print(f"warning: {line}", file=sys.stderr)
            return 0
        if args.command == "recompute-metrics":
            for path in recompute_metrics(args.trace, args.manifest):
                print(path)
            return 0
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 1
    except InternalInvariantError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
