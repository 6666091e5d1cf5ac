"""End-to-end orchestration: filter, score, enrich, aggregate, detect, report."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from commentqoe import aggregate as agg
from commentqoe.checkpoint import JsonlCheckpoint
from commentqoe.config import ConfigError, PipelineConfig
from commentqoe.embedding import (
    AnchorSet,
    HashedBagOfWordsEmbedder,
    RemoteEmbeddingClient,
    SentenceTransformerEmbedder,
    default_anchor_phrases,
    read_anchor_file,
)
from commentqoe.filtering import CANDIDATES_FILENAME, evaluate_batch, write_candidates
from commentqoe.lexicon import Lexicon, default_lexicon, load_lexicon
from commentqoe.normalize import NormalizationConfig, default_normalization, load_normalization_config
from commentqoe.report import emit_plot_series, operator_report, write_report, write_stats, dataset_stats
from commentqoe.scoring import (
    RemoteChatBackend,
    ScoreFailure,
    ScoringPrompt,
    load_prompt,
    load_rule_backend,
    score_batch,
    write_scored,
)
from commentqoe.simulate import enrich, inject_outage, write_enriched

logger = logging.getLogger(__name__)

STAGES = ("filter", "score", "enrich", "aggregate", "detect", "report")


class StageError(RuntimeError):
    """A pipeline stage failed. Checkpoints written so far are kept, so
    re-running the same config resumes the filter and score stages."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Components:
    normalization: NormalizationConfig
    lexicon: Lexicon
    anchors: AnchorSet
    provider: object
    prompt: ScoringPrompt
    backend: object


def build_components(cfg: PipelineConfig) -> Components:
    norm = load_normalization_config(cfg.normalization) if cfg.normalization else default_normalization()
    lex = load_lexicon(cfg.lexicon, norm) if cfg.lexicon else default_lexicon(norm)

    emb = cfg.embedding
    if emb.provider == "stub":
        provider = HashedBagOfWordsEmbedder(emb.dim)
    elif emb.provider == "remote":
        provider = RemoteEmbeddingClient.from_env(dim=emb.dim, model=emb.model)
    else:
        provider = SentenceTransformerEmbedder(emb.model)
    phrases = read_anchor_file(cfg.anchors) if cfg.anchors else default_anchor_phrases()
    anchors = AnchorSet.build(phrases, provider, norm)

    prompt = load_prompt(cfg.scoring.prompt_template) if cfg.scoring.prompt_template else ScoringPrompt()
    if cfg.scoring.backend == "stub":
        backend = load_rule_backend(cfg.scoring.rules, prompt, norm)
    else:
        kwargs = {"model": cfg.scoring.model} if cfg.scoring.model else {}
        backend = RemoteChatBackend.from_env(**kwargs)
    return Components(norm, lex, anchors, provider, prompt, backend)


def read_comments(path: str | Path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "original_comment" not in reader.fieldnames:
            raise ConfigError(f"{path}: expected an 'original_comment' column")
        return [row["original_comment"] or "" for row in reader]


def write_excluded(items, path) -> None:
    """Comments kept out of the analysis: -1 verdicts and scoring failures."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("original_comment", "comment_mos", "reason"))
        for it in items:
            if isinstance(it, ScoreFailure):
                w.writerow([it.original_comment, "", it.reason])
            else:
                w.writerow([it.original_comment, it.comment_mos, "not_relevant"])


def run_pipeline(cfg: PipelineConfig, components: Components | None = None) -> dict[str, Path]:
    """Run every stage and return the artifact paths by name."""
    if cfg.input is None:
        raise ConfigError("no input file configured")
    if not Path(cfg.input).is_file():
        raise ConfigError(f"input file not found: {cfg.input}")
    try:
        comps = components or build_components(cfg)
    except (OSError, ValueError) as err:
        raise ConfigError(f"could not set up pipeline: {err}") from err

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoints"
    art: dict[str, Path] = {}
    stage = "filter"
    try:
        raws = read_comments(cfg.input)
        results = evaluate_batch(
            raws, comps.normalization, comps.lexicon, comps.anchors, cfg.thresholds, comps.provider,
            chunk_size=cfg.chunk_size, checkpoint=JsonlCheckpoint(ckpt / "filter.jsonl"),
            workers=cfg.workers,
        )
        art["candidates"] = out / CANDIDATES_FILENAME
        n_pass = write_candidates(results, art["candidates"])
        logger.info("filter: %d of %d comments kept", n_pass, len(raws))

        stage = "score"
        candidates = [r.original_comment for r in results if r.passed]
        batch = score_batch(candidates, comps.backend, cfg.scoring.backend_config, prompt=comps.prompt,
                            checkpoint=JsonlCheckpoint(ckpt / "score.jsonl"))
        art["scored"] = out / "scored.csv"
        write_scored(batch.scored, art["scored"])
        art["excluded"] = out / "excluded.csv"
        write_excluded(batch.excluded, art["excluded"])
        art["stats"] = out / "stats.json"
        write_stats(dataset_stats(batch.scored), art["stats"])

        stage = "enrich"
        records = enrich(batch.scored, cfg.simulation)
        if cfg.outage is not None:
            records = inject_outage(records, cfg.outage)
        art["enriched"] = out / "enriched.csv"
        write_enriched(records, art["enriched"])

        stage = "aggregate"
        aggs = agg.aggregate(records, cfg.window)
        globals_ = agg.global_mos(aggs)
        deltas = agg.delta_mos(aggs, globals_)
        art["aggregates"] = out / "aggregates.csv"
        agg.write_aggregates(aggs, art["aggregates"])
        art["global"] = out / "global_mos.csv"
        agg.write_globals(globals_, art["global"])
        art["delta"] = out / "delta_mos.csv"
        agg.write_deltas(deltas, art["delta"])
        if cfg.objective is not None:
            objective = agg.read_objective(cfg.objective, cfg.window)
            art["discrepancy"] = out / "discrepancy.csv"
            agg.write_discrepancies(agg.compare_objective(aggs, objective), art["discrepancy"])

        stage = "detect"
        episodes = agg.detect_episodes(deltas, cfg.threshold, cfg.min_run)
        art["episodes"] = out / "episodes.json"
        agg.write_episodes(episodes, art["episodes"])
        for e in episodes:
            logger.warning("alert: %s below %.2f from %s to %s (min %.3f)", e.isp, e.threshold,
                           e.first_window.label(), e.last_window.next().label(), e.min_delta)

        stage = "report"
        isps = cfg.simulation.isps
        (out / "reports").mkdir(exist_ok=True)
        for isp in isps:
            art[f"report:{isp}"] = out / "reports" / f"{isp}.json"
            write_report(operator_report(isp, aggs, globals_, episodes, isps=isps), art[f"report:{isp}"])
        for path in emit_plot_series(globals_, deltas, out / "plots", isps=isps, threshold=cfg.threshold):
            art[f"plot:{path.name}"] = path
    except ConfigError:
        raise
    except Exception as err:
        raise StageError(stage, err) from err
    return art
