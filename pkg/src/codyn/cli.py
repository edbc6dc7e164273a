"""Command-line entry point: ``codyn run | inspect | demo``.

Exit codes: 0 success, 2 configuration error, 3 message format error,
4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import VARIANTS, ConfigError, ScenarioConfig, SweepConfig, load_run_config
from .message import FormatError, read_message, write_message
from .pipeline import InvariantError, build_stream, calibration_for, run_pipeline, sweep

log = logging.getLogger("codyn")

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_INVARIANT = 0, 2, 3, 4
PRESETS = ("delay300", "posenoise", "bandwidth")
FRAME_FIELDS = ["frame", "t_ms", "label", "variant", "score", "x", "y", "dx", "dy", "yaw"]


def _split(text: str | None):
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


# -- run ------------------------------------------------------------------------

def cmd_run(config: str, out: str, seeds=None, variants=None) -> int:
    run = load_run_config(config)
    grid = run.sweep
    if seeds is not None:
        try:
            seeds = tuple(int(s) for s in seeds)
        except ValueError as exc:
            raise ConfigError(f"--seeds: {exc}") from exc
        grid = SweepConfig(grid.delays_ms, grid.noise_levels, grid.variants, seeds)
    if variants is not None:
        grid = SweepConfig(grid.delays_ms, grid.noise_levels, tuple(variants), grid.seeds)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    report = sweep(run.scenario, grid)
    (out_dir / "report.csv").write_text(report.to_csv())
    manifest = {
        "codyn_version": __version__,
        "config_path": run.source,
        "config_sha256": run.scenario.digest(),
        "sweep": {"delays_ms": list(grid.delays_ms), "noise_levels": list(grid.noise_levels),
                  "variants": list(grid.variants), "seeds": list(grid.seeds)},
        "cell_wall_time_s": {f"delay={d:g},noise={n:g}": round(w, 3)
                             for (d, n), w in report.wall_times.items()},
        "stream_digests": {f"delay={d:g},noise={n:g},seed={s}": h
                           for (d, n, s), h in report.stream_digests.items()},
        "total_wall_time_s": round(time.perf_counter() - t0, 3),
        "created_unix": int(time.time()),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(report.rows)} rows to {out_dir / 'report.csv'}")
    return EXIT_OK


# -- inspect --------------------------------------------------------------------

def cmd_inspect(path: str) -> int:
    if not os.path.exists(path):
        raise ConfigError(f"message file not found: {path}")
    msg = read_message(path)
    f = msg.features
    print(f"sender {msg.sender}  t={msg.t} ms  rois={len(msg.rois)}  cells={len(f)}  "
          f"D={f.grid.channels}")
    if msg.rois:
        print(f"{'#':>3} {'conf':>7} {'x':>9} {'y':>9} {'dx':>7} {'dy':>7} {'yaw':>8}")
        for i, r in enumerate(msg.rois):
            print(f"{i:>3} {r.confidence:7.4f} {r.x:9.3f} {r.y:9.3f} {r.dx:7.3f} {r.dy:7.3f} "
                  f"{r.yaw:8.4f}")
        print(f"{'#':>3} {'ale_cls':>9} {'ale_reg':>9} {'epi_cls':>9} {'epi_reg':>9}")
        for i, u in enumerate(msg.uncertainties):
            print(f"{i:>3} " + " ".join(f"{v:9.5f}" for v in u.as_tuple()))
    return EXIT_OK


# -- demo -----------------------------------------------------------------------

def _frame_rows(result, stream):
    rows = []
    for frame, recs in zip(stream.ego, result.records):
        for g in frame.gts:
            rows.append([frame.index, f"{frame.t:g}", "gt", result.variant, "1",
                         *(f"{v:.4f}" for v in (g.x, g.y, g.dx, g.dy, g.yaw))])
        for r in recs:
            b = r.box
            rows.append([frame.index, f"{frame.t:g}", "det", result.variant, f"{r.score:.6f}",
                         *(f"{v:.4f}" for v in (b.x, b.y, b.dx, b.dy, b.yaw))])
    return rows


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _demo_delay300(cfg: ScenarioConfig, seed: int, out: Path) -> None:
    cfg = cfg.with_cell(300.0, 0.0, 0.0)
    stream = build_stream(cfg, seed)
    calib = calibration_for(cfg)
    for v in ("full", "no-dftm", "no-compensation"):
        res = run_pipeline(v, stream, calib)
        _write_csv(out / f"delay300_{v}.csv", FRAME_FIELDS, _frame_rows(res, stream))
        print(f"{v:>16}: AP@0.5 {res.ap(0.5):.4f}  AP@0.7 {res.ap(0.7):.4f}")


def _demo_posenoise(cfg: ScenarioConfig, seed: int, out: Path) -> None:
    base = cfg.with_cell(300.0, 0.0, 0.0)
    stream = build_stream(base, seed)
    res = run_pipeline("full", stream, calibration_for(base))
    _write_csv(out / "posenoise_full_noiseless.csv", FRAME_FIELDS, _frame_rows(res, stream))
    for sigma in (0.0, 0.2, 0.4):
        c = cfg.with_cell(300.0, sigma, sigma)
        stream = build_stream(c, seed)
        for v in ("full", "late-fusion"):
            res = run_pipeline(v, stream, calibration_for(c))
            _write_csv(out / f"posenoise_{v}_sigma{sigma:g}.csv", FRAME_FIELDS,
                       _frame_rows(res, stream))
            print(f"sigma {sigma:g} {v:>12}: AP@0.5 {res.ap(0.5):.4f}")


def _demo_bandwidth(cfg: ScenarioConfig, seed: int, out: Path) -> None:
    cfg = cfg.with_cell(300.0, 0.0, 0.0)
    stream = build_stream(cfg, seed)
    rows = []
    for frame in stream.ego:
        for cs in stream.collabs:
            k = cs.latest(frame.t)
            if k < 0:
                continue
            m = cs.messages[k]
            rows.append([frame.index, f"{frame.t:g}", cs.agent.id, k, f"{m.t}", len(m.rois),
                         len(m.features), cs.sizes[k], 22 + 40 * len(m.rois)])
    _write_csv(out / "bandwidth_per_frame.csv",
               ["frame", "t_ms", "sender", "message_index", "message_t_ms", "rois", "cells",
                "feature_bytes", "box_only_bytes"], rows)
    calib = calibration_for(cfg)
    summary = []
    for v in ("full", "late-fusion", "single"):
        res = run_pipeline(v, stream, calib)
        summary.append([v, f"{res.ap(0.5):.6f}", f"{res.ap(0.7):.6f}",
                        f"{res.mean_message_bytes:.2f}"])
        print(f"{v:>12}: AP@0.7 {res.ap(0.7):.4f}  mean bytes {res.mean_message_bytes:.0f}")
    _write_csv(out / "bandwidth_summary.csv", ["variant", "ap50", "ap70", "mean_msg_bytes"], summary)
    first = next(cs for cs in stream.collabs if cs.messages)
    write_message(out / "sample.cdtm", first.messages[0])


_DEMOS = {"delay300": _demo_delay300, "posenoise": _demo_posenoise, "bandwidth": _demo_bandwidth}


def cmd_demo(preset: str, out: str, seed: int = 0) -> int:
    if preset not in _DEMOS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _DEMOS[preset](ScenarioConfig(), seed, out_dir)
    return EXIT_OK


# -- entry ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="codyn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"codyn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a delay x noise x variant sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seeds", help="comma-separated seed list, overrides the config")
    r.add_argument("--variants", help=f"comma-separated subset of {','.join(VARIANTS)}")

    i = sub.add_parser("inspect", help="dump a .cdtm message file")
    i.add_argument("file")

    d = sub.add_parser("demo", help="emit plot-ready CSVs for a preset scenario")
    d.add_argument("preset", choices=PRESETS)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, _split(args.seeds), _split(args.variants))
        if args.command == "inspect":
            return cmd_inspect(args.file)
        return cmd_demo(args.preset, args.out, args.seed)
    except ConfigError as exc:
        print(f"codyn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"codyn: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except InvariantError as exc:
        print(f"codyn: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
