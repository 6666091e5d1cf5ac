"""Command-line entry point.

Every stage reads and writes the documented CSV/JSON formats so stages can
be run one at a time or chained with ``pipeline``. Shared settings (seed,
ISPs, thresholds, providers) come from ``--config``; defaults apply when it
is omitted.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from commentqoe import aggregate as agg
from commentqoe.checkpoint import JsonlCheckpoint
from commentqoe.config import ConfigError, PipelineConfig, load_config
from commentqoe.filtering import CANDIDATES_FILENAME, evaluate_batch, write_candidates
from commentqoe.normalize import (
    default_normalization,
    load_normalization_config,
    normalize_text,
    word_count,
)
from commentqoe.pipeline import StageError, build_components, read_comments, run_pipeline, write_excluded
from commentqoe.report import (
    dataset_stats,
    emit_plot_series,
    operator_report,
    write_report,
    write_stats,
)
from commentqoe.scoring import read_scored, score_batch, write_scored
from commentqoe.simulate import (
    OutageSpec,
    SimulationConfig,
    enrich,
    inject_outage,
    parse_timestamp,
    read_enriched,
    write_enriched,
)

logger = logging.getLogger("commentqoe")


def _config(args) -> PipelineConfig:
    return load_config(args.config) if args.config else PipelineConfig()


def cmd_normalize(args) -> int:
    cfg = _config(args)
    norm = load_normalization_config(cfg.normalization) if cfg.normalization else default_normalization()
    rows = read_comments(args.input)
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("original_comment", "normalized_comment", "word_count"))
        for raw in rows:
            n = normalize_text(raw, norm)
            w.writerow([raw, n, word_count(n)])
    return 0


def cmd_filter(args) -> int:
    cfg = _config(args)
    comps = build_components(cfg)
    ckpt = JsonlCheckpoint(args.checkpoint) if args.checkpoint else None
    results = evaluate_batch(read_comments(args.input), comps.normalization, comps.lexicon,
                             comps.anchors, cfg.thresholds, comps.provider,
                             chunk_size=cfg.chunk_size, checkpoint=ckpt, workers=cfg.workers)
    n = write_candidates(results, args.output)
    print(f"{n} of {len(results)} comments kept -> {args.output}")
    return 0


def cmd_score(args) -> int:
    cfg = _config(args)
    comps = build_components(cfg)
    ckpt = JsonlCheckpoint(args.checkpoint) if args.checkpoint else None
    batch = score_batch(read_comments(args.input), comps.backend, cfg.scoring.backend_config,
                        prompt=comps.prompt, checkpoint=ckpt)
    write_scored(batch.scored, args.output)
    if args.excluded:
        write_excluded(batch.excluded, args.excluded)
    print(f"valid={len(batch.valid)} excluded={len(batch.excluded)} total={len(batch.items)}")
    return 0


def cmd_enrich(args) -> int:
    cfg = _config(args)
    sim = cfg.simulation
    if args.seed is not None:
        sim = SimulationConfig(sim.isps, args.seed, sim.base_time, sim.step)
    records = enrich(read_scored(args.input), sim)
    outage = cfg.outage
    if args.outage_isp:
        outage = OutageSpec(args.outage_isp, parse_timestamp(args.outage_start),
                            parse_timestamp(args.outage_end), args.forced_mos)
    if outage is not None:
        records = inject_outage(records, outage)
    write_enriched(records, args.output)
    return 0


def cmd_aggregate(args) -> int:
    cfg = _config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    aggs = agg.aggregate(read_enriched(args.input), cfg.window)
    globals_ = agg.global_mos(aggs)
    agg.write_aggregates(aggs, out / "aggregates.csv")
    agg.write_globals(globals_, out / "global_mos.csv")
    agg.write_deltas(agg.delta_mos(aggs, globals_), out / "delta_mos.csv")
    objective = args.objective or cfg.objective
    if objective:
        points = agg.read_objective(objective, cfg.window)
        agg.write_discrepancies(agg.compare_objective(aggs, points), out / "discrepancy.csv")
    return 0


def cmd_detect(args) -> int:
    cfg = _config(args)
    threshold = cfg.threshold if args.threshold is None else args.threshold
    min_run = cfg.min_run if args.min_run is None else args.min_run
    episodes = agg.detect_episodes(agg.read_deltas(args.input, cfg.window), threshold, min_run)
    agg.write_episodes(episodes, args.output)
    for e in episodes:
        print(f"{e.isp}: {e.first_window.label()} .. {e.last_window.end.isoformat()} "
              f"({e.window_count} windows, min delta {e.min_delta:.3f})")
    return 0


def cmd_report(args) -> int:
    cfg = _config(args)
    src = Path(args.in_dir)
    out = Path(args.out_dir or src)
    aggs = agg.read_aggregates(src / "aggregates.csv", cfg.window)
    globals_ = agg.read_globals(src / "global_mos.csv", cfg.window)
    deltas = agg.read_deltas(src / "delta_mos.csv", cfg.window)
    ep_path = src / "episodes.json"
    episodes = agg.read_episodes(ep_path, cfg.window) if ep_path.exists() else \
        agg.detect_episodes(deltas, cfg.threshold, cfg.min_run)
    isps = cfg.simulation.isps
    (out / "reports").mkdir(parents=True, exist_ok=True)
    for isp in isps:
        write_report(operator_report(isp, aggs, globals_, episodes, isps=isps),
                     out / "reports" / f"{isp}.json")
    emit_plot_series(globals_, deltas, out / "plots", isps=isps, threshold=cfg.threshold)
    return 0


def cmd_stats(args) -> int:
    stats = dataset_stats(read_scored(args.input))
    if args.output:
        write_stats(stats, args.output)
    print(json.dumps(stats.to_dict(), indent=2))
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config_file)
    artifacts = run_pipeline(cfg)
    for name, path in artifacts.items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="commentqoe", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        if name != "pipeline":
            sp.add_argument("--config", help="pipeline YAML config for shared settings")
        return sp

    sp = add("normalize", cmd_normalize, "normalize a comment CSV")
    sp.add_argument("input")
    sp.add_argument("output")

    sp = add("filter", cmd_filter, "keep QoE-relevant comments")
    sp.add_argument("input")
    sp.add_argument("output", nargs="?", default=CANDIDATES_FILENAME)
    sp.add_argument("--checkpoint")

    sp = add("score", cmd_score, "score comments 1-5 (or -1)")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--excluded", help="write -1 and failed comments here")
    sp.add_argument("--checkpoint")

    sp = add("enrich", cmd_enrich, "attach simulated ISP labels and timestamps")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--outage-isp")
    sp.add_argument("--outage-start")
    sp.add_argument("--outage-end")
    sp.add_argument("--forced-mos", type=int, default=1)

    sp = add("aggregate", cmd_aggregate, "window averages, global MOS and delta MOS")
    sp.add_argument("input")
    sp.add_argument("out_dir")
    sp.add_argument("--objective", help="objective MOS series to compare against")

    sp = add("detect", cmd_detect, "find below-threshold delta MOS episodes")
    sp.add_argument("input", help="delta_mos.csv")
    sp.add_argument("output", help="episodes JSON")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--min-run", type=int)

    sp = add("report", cmd_report, "operator reports and plot series")
    sp.add_argument("in_dir", help="directory holding aggregates/global/delta files")
    sp.add_argument("--out-dir")

    sp = add("stats", cmd_stats, "score distribution of a scored dataset")
    sp.add_argument("input")
    sp.add_argument("--output")

    sp = add("pipeline", cmd_pipeline, "run every stage from a config file")
    sp.add_argument("config_file")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "enrich" and args.outage_isp and not (args.outage_start and args.outage_end):
        print("error: --outage-isp needs --outage-start and --outage-end", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
