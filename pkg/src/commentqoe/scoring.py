"""Comment-level MOS scoring through a language-model backend.

Every comment is scored in its own single-turn request with deterministic
decoding. Replies are parsed strictly first, then leniently; a comment whose
reply still cannot be parsed after ``max_retries`` attempts is recorded as a
failure and excluded from the dataset.
"""

from __future__ import annotations

import csv
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence, Union

import httpx
import yaml

from commentqoe.checkpoint import JsonlCheckpoint, fingerprint
from commentqoe.lexicon import PhraseSet
from commentqoe.normalize import NormalizationConfig, default_normalization, normalize_text
from commentqoe.resources import default_path

logger = logging.getLogger(__name__)

VALID_SCORES = (-1, 1, 2, 3, 4, 5)
NOT_RELEVANT = -1

SCALE_DESCRIPTIONS = (
    "1 - Very Dissatisfied: Severe QoE problems; unusable experience "
    "(e.g., constant lags, freezes, or crashes)",
    "2 - Dissatisfied: Major recurring issues; frequent buffering or disconnects",
    "3 - Neutral: Minor or occasional QoE disruptions",
    "4 - Satisfied: Good service with negligible issues",
    "5 - Very Satisfied: Perfect experience; no noticeable performance problems",
)
FALLBACK_INSTRUCTION = (
    "When the comment says nothing about service quality or the viewing experience, "
    "answer -1 instead of a rating."
)


class ScoreError(ValueError):
    pass


class ParseError(ScoreError):
    """The reply holds no integer at all."""


class RangeError(ScoreError):
    """The reply holds an integer outside {-1, 1..5}."""


class BackendError(RuntimeError):
    """Transient backend failure (transport, throttling, server error)."""


class BackendConfigError(BackendError):
    """Unrecoverable backend misconfiguration; aborts a batch."""


class ScoringFailed(RuntimeError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _default_template() -> str:
    return default_path("prompt.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class ScoringPrompt:
    """Prompt template with ``{comment}``, ``{scale}`` and ``{fallback}``
    slots. The comment is spliced in verbatim, never through ``str.format``,
    so braces in comments are harmless."""

    template: str = field(default_factory=_default_template)
    scale_descriptions: tuple = SCALE_DESCRIPTIONS
    fallback_instruction: str = FALLBACK_INSTRUCTION

    def __post_init__(self):
        if self.template.count("{comment}") != 1:
            raise ValueError("template must contain exactly one {comment} slot")
        if len(self.scale_descriptions) != 5:
            raise ValueError("scale must have five levels")
        if "{scale}" not in self.template or "{fallback}" not in self.template:
            raise ValueError("template must contain {scale} and {fallback} slots")

    def _parts(self) -> tuple[str, str]:
        head, tail = self.template.split("{comment}")
        fill = {"scale": "\n".join(self.scale_descriptions), "fallback": self.fallback_instruction}
        return head.format(**fill), tail.format(**fill)

    def render(self, comment: str) -> str:
        head, tail = self._parts()
        return head + comment + tail

    def extract_comment(self, rendered: str) -> str:
        head, tail = self._parts()
        if not (rendered.startswith(head) and rendered.endswith(tail)):
            raise ValueError("text was not rendered from this prompt")
        return rendered[len(head):len(rendered) - len(tail)]


def load_prompt(path: str | Path) -> ScoringPrompt:
    return ScoringPrompt(template=Path(path).read_text(encoding="utf-8"))


def build_prompt(comment: str, p: ScoringPrompt | None = None) -> str:
    if not comment:
        raise ValueError("comment must be non-empty")
    return (p or ScoringPrompt()).render(comment)


_STRICT = {str(s): s for s in VALID_SCORES}
_INT_TOKEN = re.compile(r"(?<![\w.])[-–−]?\d+(?!\w|\.\d)")


def parse_score(response: str, *, lenient: bool = True) -> int:
    """Parse a backend reply into a score.

    Strict: the trimmed reply is exactly one of ``-1``, ``1`` ... ``5``.
    Lenient: the first integer token in the reply, if it is a valid score.
    """
    text = response.strip()
    if text in _STRICT:
        return _STRICT[text]
    if not lenient:
        raise ParseError(f"reply {response!r} is not exactly a valid score")
    m = _INT_TOKEN.search(text)
    if m is None:
        raise ParseError(f"no integer in reply {response!r}")
    value = int(m.group().replace("–", "-").replace("−", "-"))
    if value not in VALID_SCORES:
        raise RangeError(f"score {value} outside {VALID_SCORES}")
    return value


@dataclass(frozen=True)
class ScoredComment:
    original_comment: str
    comment_mos: int

    def __post_init__(self):
        if type(self.comment_mos) is not int or self.comment_mos not in VALID_SCORES:
            raise ValueError(f"comment_mos must be one of {VALID_SCORES}, got {self.comment_mos!r}")

    @property
    def is_valid(self) -> bool:
        return self.comment_mos != NOT_RELEVANT


@dataclass(frozen=True)
class ScoreFailure:
    original_comment: str
    reason: str


@dataclass(frozen=True)
class BackendConfig:
    deterministic: bool = True
    pacing_seconds: float = 1.0
    max_retries: int = 3  # total attempts per comment

    def __post_init__(self):
        if self.pacing_seconds < 0:
            raise ValueError("pacing_seconds must be >= 0")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")

    @property
    def temperature(self) -> float:
        return 0.0 if self.deterministic else 1.0


class ScoringBackend(Protocol):
    name: str

    def complete(self, prompt: str, *, temperature: float) -> str: ...


class RemoteChatBackend:
    """OpenAI-compatible chat-completions client.

    Sends ``{"model", "messages": [{"role": "user", "content": prompt}],
    "temperature"}`` to ``<endpoint>/chat/completions`` and reads
    ``choices[0].message.content``. No conversation state is kept.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, model: str = "gpt-4o",
                 timeout: float = 60.0, transport: httpx.BaseTransport | None = None):
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.model = model
        self.name = f"remote-chat:{model}"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteChatBackend":
        endpoint = os.environ.get("COMMENTQOE_LLM_ENDPOINT")
        if not endpoint:
            raise BackendConfigError("COMMENTQOE_LLM_ENDPOINT is not set")
        kwargs.setdefault("api_key", os.environ.get("COMMENTQOE_LLM_API_KEY"))
        if os.environ.get("COMMENTQOE_LLM_MODEL"):
            kwargs.setdefault("model", os.environ["COMMENTQOE_LLM_MODEL"])
        return cls(endpoint, **kwargs)

    def complete(self, prompt: str, *, temperature: float = 0.0) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        try:
            resp = self._client.post(self.url, json=payload)
        except httpx.HTTPError as err:
            raise BackendError(f"transport error: {err}") from err
        if resp.status_code in (400, 401, 403, 404):
            raise BackendConfigError(f"backend rejected request: HTTP {resp.status_code}")
        if resp.status_code >= 300:
            raise BackendError(f"HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as err:
            raise BackendError(f"malformed completion response: {err}") from err


class KeywordRuleBackend:
    """Offline scoring backend: an ordered keyword rule table.

    The comment is recovered from the rendered prompt, normalized, and
    scored by the first rule with a matching phrase. The reply is a pure
    function of (comment text, rule table).
    """

    def __init__(self, rules: Sequence[tuple[int, Iterable[str]]], default: int = NOT_RELEVANT,
                 prompt: ScoringPrompt | None = None, cfg: NormalizationConfig | None = None):
        self.prompt = prompt or ScoringPrompt()
        self.cfg = cfg or default_normalization()
        self.default = default
        self._rules = []
        for score, phrases in rules:
            if score not in VALID_SCORES:
                raise ValueError(f"rule score {score} is not a valid score")
            normed = {normalize_text(p, self.cfg) for p in phrases} - {""}
            self._rules.append((score, PhraseSet(normed)))
        self.name = "keyword-rules:" + fingerprint(
            [default, [[s, sorted(ps.phrases)] for s, ps in self._rules]])[:16]

    def score_text(self, comment: str) -> int:
        tokens = normalize_text(comment, self.cfg).split()
        for score, phrases in self._rules:
            if phrases.matches(tokens):
                return score
        return self.default

    def complete(self, prompt: str, *, temperature: float = 0.0) -> str:
        return str(self.score_text(self.prompt.extract_comment(prompt)))


def load_rule_backend(path: str | Path | None = None, prompt: ScoringPrompt | None = None,
                      cfg: NormalizationConfig | None = None) -> KeywordRuleBackend:
    with open(path or default_path("stub_rules.yaml"), encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    rules = [(int(r["score"]), [str(p) for p in r["phrases"]]) for r in raw.get("rules", ())]
    return KeywordRuleBackend(rules, int(raw.get("default", NOT_RELEVANT)), prompt, cfg)


class Pacer:
    """Enforces a minimum gap between successive request starts."""

    def __init__(self, delay: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.delay = delay
        self._clock = clock
        self._sleep = sleep
        self._last: float | None = None

    def wait(self) -> None:
        if self._last is not None:
            remaining = self._last + self.delay - self._clock()
            while remaining > 0:
                self._sleep(remaining)
                remaining = self._last + self.delay - self._clock()
        self._last = self._clock()


def score_comment(comment: str, backend: ScoringBackend, cfg: BackendConfig = BackendConfig(),
                  *, prompt: ScoringPrompt | None = None, pacer: Pacer | None = None) -> ScoredComment:
    prompt = prompt or ScoringPrompt()
    pacer = pacer or Pacer(cfg.pacing_seconds)
    text = build_prompt(comment, prompt)
    reason = "no attempt made"
    for attempt in range(1, cfg.max_retries + 1):
        pacer.wait()
        try:
            reply = backend.complete(text, temperature=cfg.temperature)
            return ScoredComment(comment, parse_score(reply))
        except BackendConfigError:
            raise
        except (BackendError, ScoreError) as err:
            reason = f"{type(err).__name__}: {err}"
            logger.warning("attempt %d/%d failed: %s", attempt, cfg.max_retries, reason)
    raise ScoringFailed(reason)


@dataclass
class ScoreBatchResult:
    items: list[Union[ScoredComment, ScoreFailure]]

    @property
    def valid(self) -> list[ScoredComment]:
        return [i for i in self.items if isinstance(i, ScoredComment) and i.is_valid]

    @property
    def not_relevant(self) -> list[ScoredComment]:
        return [i for i in self.items if isinstance(i, ScoredComment) and not i.is_valid]

    @property
    def failures(self) -> list[ScoreFailure]:
        return [i for i in self.items if isinstance(i, ScoreFailure)]

    @property
    def excluded(self) -> list[Union[ScoredComment, ScoreFailure]]:
        return [i for i in self.items if not (isinstance(i, ScoredComment) and i.is_valid)]

    @property
    def scored(self) -> list[ScoredComment]:
        return [i for i in self.items if isinstance(i, ScoredComment)]


def score_batch(comments: Sequence[str], backend: ScoringBackend,
                cfg: BackendConfig = BackendConfig(), *, prompt: ScoringPrompt | None = None,
                checkpoint: JsonlCheckpoint | None = None,
                pacer: Pacer | None = None) -> ScoreBatchResult:
    """Score comments one request at a time, in order.

    Comments already present in ``checkpoint`` are replayed without a
    request. Transient failures are logged and recorded as
    :class:`ScoreFailure`; only :class:`BackendConfigError` aborts.
    """
    prompt = prompt or ScoringPrompt()
    pacer = pacer or Pacer(cfg.pacing_seconds)
    settings = fingerprint([backend.name, prompt.render(""), cfg.deterministic, cfg.max_retries])
    items: list[Union[ScoredComment, ScoreFailure]] = []
    total = len(comments)
    for i, comment in enumerate(comments):
        key = fingerprint([settings, i, comment])
        if checkpoint is not None and key in checkpoint:
            rec = checkpoint.get(key)
            if rec["mos"] is not None:
                items.append(ScoredComment(comment, rec["mos"]))
            else:
                items.append(ScoreFailure(comment, rec["reason"]))
            continue
        try:
            item = score_comment(comment, backend, cfg, prompt=prompt, pacer=pacer)
            rec = {"mos": item.comment_mos, "reason": None}
            logger.info("[%d/%d] scored %d", i + 1, total, item.comment_mos)
        except ScoringFailed as err:
            item = ScoreFailure(comment, err.reason)
            rec = {"mos": None, "reason": err.reason}
            logger.warning("[%d/%d] excluded: %s", i + 1, total, err.reason)
        items.append(item)
        if checkpoint is not None:
            checkpoint.put(key, rec)
    return ScoreBatchResult(items)


SCORED_COLUMNS = ("original_comment", "comment_mos")
_MOS_HEADER_VARIANTS = ("comment_mos", "commen_mos", "mos", "MOS", "Comment MOS")
_COMMENT_HEADER_VARIANTS = ("original_comment", "Original Comment", "comment")


def write_scored(records: Iterable[ScoredComment], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORED_COLUMNS)
        for r in records:
            w.writerow([r.original_comment, r.comment_mos])


def write_failures(failures: Iterable[ScoreFailure], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("original_comment", "reason"))
        for f in failures:
            w.writerow([f.original_comment, f.reason])


def _pick(header: Sequence[str], variants: Sequence[str], path) -> str:
    for v in variants:
        if v in header:
            return v
    raise ValueError(f"{path}: none of the columns {variants} present (found {list(header)})")


def read_scored(path: str | Path) -> list[ScoredComment]:
    """Read a scored dataset. The score column may be named ``comment_mos``
    or ``commen_mos`` (among others) and hold values such as ``5.0``."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        ccol = _pick(header, _COMMENT_HEADER_VARIANTS, path)
        mcol = _pick(header, _MOS_HEADER_VARIANTS, path)
        for lineno, row in enumerate(reader, start=2):
            value = float(row[mcol])
            if not value.is_integer():
                raise ValueError(f"{path}:{lineno}: non-integer score {row[mcol]!r}")
            out.append(ScoredComment(row[ccol] or "", int(value)))
    return out
