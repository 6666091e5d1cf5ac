"""Combined keyword + embedding filter over batches of raw comments."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

from commentqoe.checkpoint import JsonlCheckpoint, fingerprint
from commentqoe.embedding import AnchorSet, EmbeddingProvider, max_similarities
from commentqoe.lexicon import Lexicon, MatchFlags, match_keywords, rule_verdict
from commentqoe.normalize import NormalizationConfig, normalize_text, word_count

logger = logging.getLogger(__name__)

CANDIDATES_FILENAME = "loose_qoe_candidates_cleaned.csv"
CANDIDATE_COLUMNS = ("original_comment", "normalized_comment", "similarity", "word_count")


@dataclass(frozen=True)
class FilterThresholds:
    min_words: int = 5
    short_text_threshold: float = 0.40
    long_text_threshold: float = 0.28

    def __post_init__(self):
        if self.min_words < 1:
            raise ValueError("min_words must be >= 1")
        for t in (self.short_text_threshold, self.long_text_threshold):
            if not -1.0 <= t <= 1.0:
                raise ValueError(f"similarity threshold {t} outside [-1, 1]")
        if self.short_text_threshold < self.long_text_threshold:
            raise ValueError("short_text_threshold must be >= long_text_threshold")


def similarity_verdict(sim: float, words: int, th: FilterThresholds = FilterThresholds()) -> bool:
    """Length-sensitive threshold; comparisons are inclusive."""
    if words < th.min_words:
        return sim >= th.short_text_threshold
    return sim >= th.long_text_threshold


@dataclass(frozen=True)
class FilterResult:
    original_comment: str
    normalized_comment: str
    word_count: int
    flags: MatchFlags
    similarity: float | None
    passed: bool

    @property
    def rule_passed(self) -> bool:
        return rule_verdict(self.flags)


class FilterAborted(RuntimeError):
    """Embedding failed mid-batch. Chunks finished before the failure are
    in the checkpoint, so re-running with the same checkpoint resumes."""

    def __init__(self, message: str, completed_chunks: int):
        super().__init__(message)
        self.completed_chunks = completed_chunks


def _settings_key(cfg, lex, anchors, th, provider) -> str:
    return fingerprint({
        "typos": sorted(cfg.typo_table.items()),
        "run": cfg.collapse_run_length,
        "strip": sorted(cfg.strip_categories),
        "emotes": sorted(cfg.emotes),
        "lexicon": lex.fingerprint(),
        "anchors": list(anchors.phrases),
        "thresholds": [th.min_words, th.short_text_threshold, th.long_text_threshold],
        "provider": provider.name,
    })


def _evaluate_chunk(raws, cfg, lex, anchors, th, provider) -> list[FilterResult]:
    normed = [normalize_text(r, cfg) for r in raws]
    flags = [match_keywords(n, lex) for n in normed]
    # the embedding layer only ever narrows the rule layer, so rule rejects
    # (including empty texts) are never sent to the provider
    todo = [i for i, f in enumerate(flags) if rule_verdict(f) and normed[i]]
    sims: dict[int, float] = {}
    if todo:
        vecs = provider.embed_batch([normed[i] for i in todo])
        for i, s in zip(todo, max_similarities(vecs, anchors)):
            sims[i] = float(s)
    out = []
    for i, raw in enumerate(raws):
        wc = word_count(normed[i])
        sim = sims.get(i)
        passed = sim is not None and similarity_verdict(sim, wc, th)
        out.append(FilterResult(raw, normed[i], wc, flags[i], sim, passed))
    return out


def _to_json(r: FilterResult) -> list:
    f = r.flags
    return [r.normalized_comment, r.word_count, [f.has_problem, f.has_context, f.has_meme],
            r.similarity, r.passed]


def _from_json(raw: str, v: list) -> FilterResult:
    return FilterResult(raw, v[0], v[1], MatchFlags(*v[2]), v[3], v[4])


def evaluate_batch(
    raws: Sequence[str],
    cfg: NormalizationConfig,
    lex: Lexicon,
    anchors: AnchorSet,
    th: FilterThresholds,
    provider: EmbeddingProvider,
    *,
    chunk_size: int = 256,
    checkpoint: JsonlCheckpoint | None = None,
    workers: int = 1,
) -> list[FilterResult]:
    """Run the full filter and return one result per input, in input order.

    With ``checkpoint`` set, each finished chunk is persisted and chunks
    already present are reused without calling the provider.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    raws = list(raws)
    settings = _settings_key(cfg, lex, anchors, th, provider)
    chunks = [raws[i:i + chunk_size] for i in range(0, len(raws), chunk_size)]
    keys = [fingerprint([settings, k, c]) for k, c in enumerate(chunks)]
    results: list[list[FilterResult] | None] = [None] * len(chunks)
    pending = []
    for k, chunk in enumerate(chunks):
        if checkpoint is not None and keys[k] in checkpoint:
            results[k] = [_from_json(r, v) for r, v in zip(chunk, checkpoint.get(keys[k]))]
        else:
            pending.append(k)
    if pending:
        logger.info("filtering %d chunks (%d resumed)", len(pending), len(chunks) - len(pending))

    def run(k):
        return _evaluate_chunk(chunks[k], cfg, lex, anchors, th, provider)

    done = 0
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        it: Iterator = pool.map(run, pending)
        for k in pending:
            try:
                chunk_results = next(it)
            except Exception as err:
                raise FilterAborted(f"filter aborted at chunk {k}: {err}", done) from err
            results[k] = chunk_results
            if checkpoint is not None:
                checkpoint.put(keys[k], [_to_json(r) for r in chunk_results])
            done += 1
    return [r for chunk in results for r in chunk]


def filter_batch(raws, cfg, lex, anchors, th, provider, **kwargs) -> list[bool]:
    return [r.passed for r in evaluate_batch(raws, cfg, lex, anchors, th, provider, **kwargs)]


def write_candidates(results: Sequence[FilterResult], path: str | Path) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANDIDATE_COLUMNS)
        for r in results:
            if r.passed:
                w.writerow([r.original_comment, r.normalized_comment, repr(r.similarity), r.word_count])
                n += 1
    return n

