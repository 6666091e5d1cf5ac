"""Deterministic cleaning of raw chat comments.

The cleaning order is fixed: Unicode compatibility folding and lowercasing,
removal of stripped character classes, collapse of exaggerated letter runs,
removal of emote tokens, whitespace normalization, and finally whole-token
typo substitution.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from commentqoe.resources import default_path

# Unicode general categories removed from comments: uppercase/titlecase
# letters that survive lowercasing, combining marks, non-decimal numbers,
# punctuation, symbols (emoji live in So) and control/format/private-use.
DEFAULT_STRIP_CATEGORIES = frozenset(
    {
        "Lu", "Lt",
        "Mn", "Mc", "Me",
        "Nl", "No",
        "Pc", "Pd", "Ps", "Pe", "Pi", "Pf", "Po",
        "Sm", "Sc", "Sk", "So",
        "Cc", "Cf", "Cs", "Co", "Cn",
    }
)


@dataclass(frozen=True)
class NormalizationConfig:
    typo_table: Mapping[str, str] = field(default_factory=dict)
    collapse_run_length: int = 3
    strip_categories: frozenset = DEFAULT_STRIP_CATEGORIES
    emotes: frozenset = frozenset()

    def __post_init__(self):
        if self.collapse_run_length < 2:
            raise ValueError("collapse_run_length must be >= 2")
        object.__setattr__(self, "strip_categories", frozenset(self.strip_categories))
        object.__setattr__(self, "emotes", frozenset(self.emotes))
        object.__setattr__(self, "typo_table", dict(self.typo_table))
        self._validate_typos()

    def _validate_typos(self) -> None:
        # Keys and values must already be fixed points of the cleaning steps,
        # otherwise substitution would break idempotence.
        for key, value in self.typo_table.items():
            if not key or _pre_typo(key, self) != key or " " in key:
                raise ValueError(f"typo key {key!r} is not a single normalized token")
            if not value or _pre_typo(value, self) != value:
                raise ValueError(f"typo replacement {value!r} is not normalized")
            for token in value.split(" "):
                if token in self.typo_table:
                    raise ValueError(f"typo replacement {value!r} contains another typo key")


def _strip_chars(text: str, categories: frozenset) -> str:
    out = []
    for ch in text:
        if ch.isspace():
            out.append(" ")
        elif unicodedata.category(ch) not in categories:
            out.append(ch)
    return "".join(out)


_run_patterns: dict[int, re.Pattern] = {}


def _collapse_runs(text: str, run_length: int) -> str:
    pattern = _run_patterns.get(run_length)
    if pattern is None:
        # [^\W\d_] is "any letter" in Unicode-aware re
        pattern = re.compile(r"([^\W\d_])\1{%d,}" % (run_length - 1))
        _run_patterns[run_length] = pattern
    return pattern.sub(r"\1", text)


def _pre_typo(text: str, cfg: NormalizationConfig) -> str:
    text = unicodedata.normalize("NFKC", text).lower()
    text = _strip_chars(text, cfg.strip_categories)
    text = _collapse_runs(text, cfg.collapse_run_length)
    return " ".join(tok for tok in text.split() if tok not in cfg.emotes)


def normalize_text(raw: str, cfg: NormalizationConfig | None = None) -> str:
    """Clean one raw comment.

    >>> normalize_text("  Hello   WORLD ")
    'hello world'
    """
    cfg = cfg or default_normalization()
    text = _pre_typo(raw, cfg)
    if not cfg.typo_table:
        return text
    return " ".join(cfg.typo_table.get(tok, tok) for tok in text.split(" ") if tok)


def word_count(normalized: str) -> int:
    return len(normalized.split())


def load_normalization_config(path: str | Path) -> NormalizationConfig:
    """Read a YAML file with keys ``typo_table``, ``collapse_run_length``,
    ``strip_categories`` and ``emotes``; absent keys take the defaults."""
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    kwargs = {}
    if "typo_table" in raw:
        kwargs["typo_table"] = {str(k): str(v) for k, v in (raw["typo_table"] or {}).items()}
    if "collapse_run_length" in raw:
        kwargs["collapse_run_length"] = int(raw["collapse_run_length"])
    if "strip_categories" in raw:
        kwargs["strip_categories"] = frozenset(raw["strip_categories"])
    if "emotes" in raw:
        kwargs["emotes"] = frozenset(str(e) for e in raw["emotes"] or ())
    return NormalizationConfig(**kwargs)


_default: NormalizationConfig | None = None


def default_normalization() -> NormalizationConfig:
    global _default
    if _default is None:
        _default = load_normalization_config(default_path("normalization.yaml"))
    return _default
