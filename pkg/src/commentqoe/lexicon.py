"""Keyword rule layer of the comment filter.

A comment is a rule candidate when it mentions at least one problem phrase
and one context phrase and no meme phrase. Single-word phrases match whole
tokens only ("flag" never matches "flagship"); multi-word phrases match a
contiguous run of tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import yaml

from commentqoe.normalize import NormalizationConfig, default_normalization, normalize_text
from commentqoe.resources import default_path

GROUPS = ("problem", "context", "meme")


@dataclass(frozen=True)
class MatchFlags:
    has_problem: bool
    has_context: bool
    has_meme: bool


class PhraseSet:
    """Phrases indexed by their first token for token-stream matching."""

    def __init__(self, phrases: Iterable[str]):
        self.phrases = frozenset(phrases)
        self._by_first: dict[str, list[tuple[str, ...]]] = {}
        for phrase in self.phrases:
            toks = tuple(phrase.split(" "))
            self._by_first.setdefault(toks[0], []).append(toks)

    def matches(self, tokens: list[str]) -> bool:
        n = len(tokens)
        for i, tok in enumerate(tokens):
            for cand in self._by_first.get(tok, ()):
                k = len(cand)
                if k == 1 or (i + k <= n and tuple(tokens[i:i + k]) == cand):
                    return True
        return False


class Lexicon:
    """The three keyword groups. Entries are normalized on construction
    with the same config used for comments."""

    def __init__(
        self,
        problem: Iterable[str],
        context: Iterable[str],
        meme: Iterable[str],
        cfg: NormalizationConfig | None = None,
    ):
        cfg = cfg or default_normalization()
        keep_emotes = replace(cfg, emotes=frozenset())
        groups = {}
        for name, phrases in zip(GROUPS, (problem, context, meme)):
            phrases = list(phrases)
            # an entry containing an emote token would be silently rewritten
            # (or erased) by normalization, so refuse it outright
            for p in phrases:
                clash = set(normalize_text(p, keep_emotes).split()) & cfg.emotes
                if clash:
                    raise ValueError(f"{name} keyword {p!r} contains emote tokens {sorted(clash)}")
            normed = {normalize_text(p, cfg) for p in phrases}
            normed.discard("")
            groups[name] = normed
        for a, b in (("problem", "context"), ("problem", "meme"), ("context", "meme")):
            overlap = groups[a] & groups[b]
            if overlap:
                raise ValueError(f"{a} and {b} keyword groups overlap: {sorted(overlap)}")
        self._problem = PhraseSet(groups["problem"])
        self._context = PhraseSet(groups["context"])
        self._meme = PhraseSet(groups["meme"])

    @property
    def problem_keywords(self) -> frozenset:
        return self._problem.phrases

    @property
    def context_keywords(self) -> frozenset:
        return self._context.phrases

    @property
    def meme_keywords(self) -> frozenset:
        return self._meme.phrases

    def with_meme(self, *phrases: str, cfg: NormalizationConfig | None = None) -> "Lexicon":
        return Lexicon(self.problem_keywords, self.context_keywords,
                       self.meme_keywords | set(phrases), cfg)

    def fingerprint(self) -> list:
        return [sorted(self.problem_keywords), sorted(self.context_keywords),
                sorted(self.meme_keywords)]


def match_keywords(normalized: str, lex: Lexicon) -> MatchFlags:
    tokens = normalized.split()
    return MatchFlags(
        has_problem=lex._problem.matches(tokens),
        has_context=lex._context.matches(tokens),
        has_meme=lex._meme.matches(tokens),
    )


def rule_verdict(flags: MatchFlags) -> bool:
    return flags.has_problem and flags.has_context and not flags.has_meme


def load_lexicon(path: str | Path, cfg: NormalizationConfig | None = None) -> Lexicon:
    """Load a lexicon file.

    YAML files hold ``problem``, ``context`` and ``meme`` lists. Plain-text
    files use ``[problem]``/``[context]``/``[meme]`` section headers with one
    phrase per line; ``#`` starts a comment.
    """
    path = Path(path)
    if path.suffix in (".yaml", ".yml"):
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        groups = {g: [str(p) for p in raw.get(g) or ()] for g in GROUPS}
    else:
        groups = {g: [] for g in GROUPS}
        current = None
        for line in path.read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                if current not in groups:
                    raise ValueError(f"unknown lexicon section [{current}] in {path}")
                continue
            if current is None:
                raise ValueError(f"phrase {line!r} outside any section in {path}")
            groups[current].append(line)
    return Lexicon(groups["problem"], groups["context"], groups["meme"], cfg)


def default_lexicon(cfg: NormalizationConfig | None = None) -> Lexicon:
    return load_lexicon(default_path("lexicon.yaml"), cfg)
