import json

import httpx
import pytest
from hypothesis import given, strategies as st

from commentqoe.checkpoint import JsonlCheckpoint
from commentqoe.scoring import (
    FALLBACK_INSTRUCTION,
    SCALE_DESCRIPTIONS,
    BackendConfig,
    BackendConfigError,
    BackendError,
    KeywordRuleBackend,
    Pacer,
    ParseError,
    RangeError,
    RemoteChatBackend,
    ScoredComment,
    ScoringFailed,
    ScoringPrompt,
    build_prompt,
    load_prompt,
    load_rule_backend,
    parse_score,
    read_scored,
    score_batch,
    score_comment,
    write_scored,
)


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, s):
        self.now += s


class ScriptedBackend:
    """Replies from a fixed list; records each prompt it receives."""

    name = "scripted"

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []
        self.temperatures = []

    def complete(self, prompt, *, temperature):
        self.prompts.append(prompt)
        self.temperatures.append(temperature)
        r = self.replies.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


FAST = BackendConfig(pacing_seconds=0)


# -- prompt ------------------------------------------------------------------

def test_prompt_contains_comment_once():
    assert build_prompt("stream froze").count("stream froze") == 1


def test_prompt_contains_scale_and_fallback():
    text = build_prompt("stream froze")
    assert "Severe QoE problems; unusable experience" in text
    for level in SCALE_DESCRIPTIONS:
        assert level in text
    assert FALLBACK_INSTRUCTION in text


def test_prompts_differ_only_in_comment_slot():
    p = ScoringPrompt()
    a, b = p.render("stream froze"), p.render("audio delay again")
    head, tail = p.render("").split("\n>>>")[0], p.render("").split("<<<\n")[1]
    assert a.replace("stream froze", "") == b.replace("audio delay again", "")
    assert a != b and head and tail


def test_braces_in_comment_are_literal():
    p = ScoringPrompt()
    text = p.render("{scale} {0}")
    assert p.extract_comment(text) == "{scale} {0}"


def test_empty_comment_rejected():
    with pytest.raises(ValueError):
        build_prompt("")


@pytest.mark.parametrize("template", ["no slot {scale}{fallback}", "{comment}{comment}{scale}{fallback}",
                                      "{comment} no scale"])
def test_bad_template(template):
    with pytest.raises(ValueError):
        ScoringPrompt(template=template)


def test_load_prompt(tmp_path):
    p = tmp_path / "p.txt"
    p.write_text("Rate: {comment}\n{scale}\n{fallback}\n")
    assert load_prompt(p).render("x").startswith("Rate: x\n1 - Very Dissatisfied")


# -- parsing -----------------------------------------------------------------

@pytest.mark.parametrize("reply, score", [("5", 5), ("-1", -1), (" 3\n", 3), ("Score: 2", 2),
                                          ("4.", 4), ("−1", -1)])
def test_parse_ok(reply, score):
    assert parse_score(reply) == score


@pytest.mark.parametrize("reply, err", [("great!", ParseError), ("", ParseError), ("7", RangeError),
                                        ("0", RangeError), ("-3", RangeError), ("2.5", ParseError)])
def test_parse_errors(reply, err):
    with pytest.raises(err):
        parse_score(reply)


@given(st.text(max_size=6))
def test_strict_accepts_exactly_valid_set(reply):
    valid = {"-1", "1", "2", "3", "4", "5"}
    try:
        parse_score(reply, lenient=False)
        accepted = True
    except (ParseError, RangeError):
        accepted = False
    assert accepted == (reply.strip() in valid)


def test_scored_comment_domain():
    for s in (-1, 1, 5):
        ScoredComment("x", s)
    for bad in (0, 6, -2, 2.0, True):
        with pytest.raises(ValueError):
            ScoredComment("x", bad)


def test_backend_config():
    assert BackendConfig().temperature == 0.0
    assert BackendConfig().pacing_seconds == 1.0
    with pytest.raises(ValueError):
        BackendConfig(pacing_seconds=-1)
    with pytest.raises(ValueError):
        BackendConfig(max_retries=0)


# -- single comment ----------------------------------------------------------

def test_score_comment_deterministic_request():
    b = ScriptedBackend(["2"])
    assert score_comment("twitch lagging or sum", b, FAST) == ScoredComment("twitch lagging or sum", 2)
    assert b.temperatures == [0.0]
    assert ScoringPrompt().extract_comment(b.prompts[0]) == "twitch lagging or sum"


def test_retry_then_success():
    b = ScriptedBackend(["abc", BackendError("503"), "4"])
    assert score_comment("c", b, FAST).comment_mos == 4
    assert len(b.prompts) == 3


def test_retry_exhaustion():
    b = ScriptedBackend(["abc"] * 3)
    with pytest.raises(ScoringFailed) as info:
        score_comment("c", b, FAST)
    assert "ParseError" in info.value.reason
    assert len(b.prompts) == 3


def test_config_error_not_retried():
    b = ScriptedBackend([BackendConfigError("401"), "3"])
    with pytest.raises(BackendConfigError):
        score_comment("c", b, FAST)
    assert len(b.prompts) == 1


def test_stub_problem_rule():
    stub = KeywordRuleBackend([(2, ["lag", "lagging"])])
    for c in ("twitch lagging or sum", "LAAAG on stream"):
        assert score_comment(c, stub, FAST).comment_mos == 2
    assert score_comment("great play", stub, FAST).comment_mos == -1


def test_default_rule_table():
    stub = load_rule_backend()
    cases = {"no buffering": 5, "stream is fine now": 4, "stream crashed again": 1,
             "a little laggy": 3, "twitch lagging or sum": 2, "nice play": -1}
    for c, s in cases.items():
        assert stub.score_text(c) == s, c


def test_rule_backend_rejects_bad_score():
    with pytest.raises(ValueError):
        KeywordRuleBackend([(7, ["lag"])])


# -- pacing ------------------------------------------------------------------

def test_pacer_spacing_with_fake_clock():
    clock = FakeClock()
    starts = []
    pacer = Pacer(1.0, clock, clock.sleep)
    for _ in range(3):
        pacer.wait()
        starts.append(clock.now)
        clock.now += 0.25  # request latency counts toward the gap
    assert starts == [0.0, 1.0, 2.0]


def test_pacer_no_sleep_when_slow():
    clock = FakeClock()
    slept = []
    pacer = Pacer(1.0, clock, slept.append)
    pacer.wait()
    clock.now += 5
    pacer.wait()
    assert slept == []


def test_batch_pacing_with_fake_clock():
    clock = FakeClock()
    b = ScriptedBackend(["2", "3", "4"])
    stamps = []
    orig = b.complete

    def timed(prompt, *, temperature):
        stamps.append(clock.now)
        return orig(prompt, temperature=temperature)

    b.complete = timed
    score_batch(["a", "b", "c"], b, BackendConfig(pacing_seconds=1.0), pacer=Pacer(1.0, clock, clock.sleep))
    assert stamps[-1] - stamps[0] >= 2.0


# -- batch -------------------------------------------------------------------

def test_batch_partition():
    b = ScriptedBackend(["5", "-1", "x", "x", "x", "2"])
    res = score_batch(["a", "b", "c", "d"], b, FAST)
    assert [i.original_comment for i in res.items] == ["a", "b", "c", "d"]
    assert [s.comment_mos for s in res.valid] == [5, 2]
    assert [s.comment_mos for s in res.not_relevant] == [-1]
    assert [f.original_comment for f in res.failures] == ["c"]
    assert len(res.valid) + len(res.excluded) == 4


def test_batch_all_not_relevant():
    res = score_batch(["a", "b"], ScriptedBackend(["-1", "-1"]), FAST)
    assert res.valid == [] and len(res.excluded) == 2


def test_batch_config_error_aborts():
    with pytest.raises(BackendConfigError):
        score_batch(["a", "b"], ScriptedBackend(["3", BackendConfigError("bad key")]), FAST)


def test_checkpoint_replay_no_duplicate_requests(tmp_path):
    comments = ["a", "b", "c", "a"]
    ck = tmp_path / "s.jsonl"
    first = ScriptedBackend(["2", "x", "x", "x", "4", "5"])
    r1 = score_batch(comments, first, FAST, checkpoint=JsonlCheckpoint(ck))
    second = ScriptedBackend([])
    r2 = score_batch(comments, second, FAST, checkpoint=JsonlCheckpoint(ck))
    assert second.prompts == []
    assert r1.items == r2.items


def test_checkpoint_resumes_after_interruption(tmp_path):
    ck = tmp_path / "s.jsonl"
    with pytest.raises(BackendConfigError):
        score_batch(["a", "b", "c"], ScriptedBackend(["2", BackendConfigError("x")]), FAST,
                    checkpoint=JsonlCheckpoint(ck))
    b = ScriptedBackend(["3", "4"])
    res = score_batch(["a", "b", "c"], b, FAST, checkpoint=JsonlCheckpoint(ck))
    assert [s.comment_mos for s in res.valid] == [2, 3, 4]
    assert len(b.prompts) == 2


def test_stub_runs_byte_identical(tmp_path):
    comments = ["twitch lagging or sum", "no buffering", "kekw", "stream crashed", "a bit laggy"]
    paths = []
    for k in range(2):
        res = score_batch(comments, load_rule_backend(), FAST)
        paths.append(tmp_path / f"s{k}.csv")
        write_scored(res.scored, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()


# -- remote ------------------------------------------------------------------

def _chat(handler):
    return RemoteChatBackend("http://llm.test/v1", api_key="k", model="m",
                             transport=httpx.MockTransport(handler))


def test_remote_request_shape():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "2"}}]})

    res = score_comment("twitch lagging or sum", _chat(handler), FAST)
    assert res.comment_mos == 2
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["body"]["temperature"] == 0.0
    assert len(seen["body"]["messages"]) == 1


@pytest.mark.parametrize("status, err", [(401, BackendConfigError), (404, BackendConfigError),
                                         (429, BackendError), (500, BackendError)])
def test_remote_status(status, err):
    with pytest.raises(err):
        _chat(lambda r: httpx.Response(status)).complete("p")


def test_remote_malformed():
    with pytest.raises(BackendError):
        _chat(lambda r: httpx.Response(200, json={"choices": []})).complete("p")


def test_remote_from_env(monkeypatch):
    monkeypatch.delenv("COMMENTQOE_LLM_ENDPOINT", raising=False)
    with pytest.raises(BackendConfigError):
        RemoteChatBackend.from_env()


# -- files -------------------------------------------------------------------

@pytest.mark.parametrize("header", ["original_comment,comment_mos", "original_comment,commen_mos",
                                    "Original Comment,MOS"])
def test_read_scored_header_variants(tmp_path, header):
    p = tmp_path / "s.csv"
    p.write_text(f"{header}\nno buffering,5.0\nkekw,-1\n")
    assert read_scored(p) == [ScoredComment("no buffering", 5), ScoredComment("kekw", -1)]


def test_read_scored_rejects_fractional(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("original_comment,comment_mos\nx,2.5\n")
    with pytest.raises(ValueError):
        read_scored(p)


def test_scored_roundtrip(tmp_path):
    rows = [ScoredComment('quote " and, comma', 2), ScoredComment("x", -1)]
    write_scored(rows, tmp_path / "s.csv")
    assert read_scored(tmp_path / "s.csv") == rows
