import random
from datetime import datetime, timedelta

import pytest
from hypothesis import given, settings, strategies as st

from commentqoe.aggregate import (
    DeltaPoint,
    ObjectivePoint,
    WindowAggregate,
    WindowKey,
    WindowMismatchError,
    aggregate,
    compare_objective,
    delta_mos,
    detect_episodes,
    finalize,
    floor_window,
    global_mos,
    merge_partials,
    partial_sums,
    read_aggregates,
    read_deltas,
    read_episodes,
    read_globals,
    read_objective,
    write_aggregates,
    write_deltas,
    write_episodes,
    write_globals,
)
from commentqoe.simulate import EnrichedRecord

from agg_oracle import brute_means, run_scan

T0 = datetime(2024, 1, 1, 12, 0, 0)
W = timedelta(minutes=5)


def at(h, m, s=0):
    return datetime(2024, 1, 1, h, m, s)


def win(i):
    return WindowKey(T0 + i * W)


def agg_(i, isp, v, n=1):
    return WindowAggregate(win(i), isp, v, n)


@pytest.mark.parametrize("t, start", [(at(12, 3, 59), at(12, 0)), (at(12, 5), at(12, 5)),
                                      (at(12, 0, 6), at(12, 0)), (at(23, 59, 59), at(23, 55))])
def test_floor_window(t, start):
    w = floor_window(t)
    assert w.start == start and w.start <= t < w.end


def test_floor_other_widths():
    assert floor_window(at(12, 7, 30), timedelta(minutes=15)).start == at(12, 0)
    assert floor_window(datetime(1969, 12, 31, 23, 59), W).start == datetime(1969, 12, 31, 23, 55)
    with pytest.raises(ValueError):
        floor_window(T0, timedelta(0))


def test_window_key_alignment():
    with pytest.raises(ValueError):
        WindowKey(at(12, 1))
    assert win(0).next() == win(1)
    assert win(0).label() == "2024-01-01T12:00:00"


def _records(rng, n, isps=("ISP1", "ISP2", "ISP3"), span_s=3600):
    return [EnrichedRecord(rng.choice(isps), T0 + timedelta(seconds=rng.randrange(span_s)), "c",
                           rng.randint(1, 5)) for _ in range(n)]


def test_cell_mean_examples():
    recs = [EnrichedRecord("ISP1", at(12, 1), "a", 3), EnrichedRecord("ISP1", at(12, 2), "b", 4),
            EnrichedRecord("ISP1", at(12, 4, 59), "c", 5), EnrichedRecord("ISP2", at(12, 0, 6), "d", 2)]
    assert aggregate(recs) == [agg_(0, "ISP1", 4.0, 3), agg_(0, "ISP2", 2.0, 1)]


def test_matches_brute_force_under_permutation():
    rng = random.Random(11)
    for _ in range(5):
        recs = _records(rng, 1000)
        expected = brute_means(recs)
        for _ in range(3):
            rng.shuffle(recs)
            out = aggregate(recs)
            assert len(out) == len(expected)
            for a in out:
                mean, n = expected[(a.window.start, a.isp)]
                assert a.comment_count == n
                assert abs(a.avg_mos - float(mean)) <= 1e-9


def test_partials_merge_equals_whole():
    rng = random.Random(5)
    recs = _records(rng, 600)
    whole = aggregate(recs)
    merged = finalize(merge_partials(partial_sums(recs[:200]), partial_sums(recs[200:450]),
                                     partial_sums(recs[450:])))
    assert merged == whole
    with pytest.raises(WindowMismatchError):
        merge_partials(partial_sums(recs, W), partial_sums(recs, 2 * W))


def test_global_mos_table_row():
    g = global_mos([agg_(0, "ISP1", 3.64, 420), agg_(0, "ISP2", 2.81, 415), agg_(0, "ISP3", 4.12, 402)])
    assert len(g) == 1
    assert g[0].global_mos == pytest.approx((3.64 + 2.81 + 4.12) / 3, abs=1e-12)
    assert g[0].global_mos == pytest.approx(3.5233333333, abs=1e-9)
    assert g[0].isp_count == 3
    d = {p.isp: p.delta for p in delta_mos([agg_(0, "ISP1", 3.64), agg_(0, "ISP2", 2.81),
                                             agg_(0, "ISP3", 4.12)], g)}
    assert d["ISP2"] == pytest.approx(-0.7133333333, abs=1e-9)


def test_global_mos_simple_cases():
    assert global_mos([agg_(0, "ISP1", 2.5)])[0].global_mos == 2.5
    assert global_mos([agg_(0, "A", 3.3), agg_(0, "B", 3.3), agg_(0, "C", 3.3)])[0].global_mos == \
        pytest.approx(3.3, abs=1e-15)
    # unweighted: volume does not matter
    assert global_mos([agg_(0, "A", 1.0, 1000), agg_(0, "B", 5.0, 1)])[0].global_mos == 3.0


def test_absent_isp_left_out_of_divisor():
    g = global_mos([agg_(0, "ISP1", 2.0), agg_(0, "ISP2", 4.0), agg_(1, "ISP1", 2.0)])
    assert [(p.global_mos, p.isp_count) for p in g] == [(3.0, 2), (2.0, 1)]
    deltas = delta_mos([agg_(0, "ISP1", 2.0), agg_(0, "ISP2", 4.0), agg_(1, "ISP1", 2.0)], g)
    assert [(d.window, d.isp, d.delta) for d in deltas] == [
        (win(0), "ISP1", -1.0), (win(0), "ISP2", 1.0), (win(1), "ISP1", 0.0)]


def test_duplicate_and_mismatch_errors():
    with pytest.raises(ValueError):
        global_mos([agg_(0, "A", 2.0), agg_(0, "A", 3.0)])
    with pytest.raises(WindowMismatchError):
        delta_mos([agg_(0, "A", 2.0)], global_mos([agg_(1, "A", 2.0)]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["ISP1", "ISP2", "ISP3"]), st.integers(0, 1800),
                          st.integers(1, 5)), min_size=1, max_size=200), st.randoms())
def test_properties(rows, rnd):
    recs = [EnrichedRecord(i, T0 + timedelta(seconds=s), "c", m) for i, s, m in rows]
    aggs = aggregate(recs)
    g = global_mos(aggs)
    deltas = delta_mos(aggs, g)
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    a2 = aggregate(shuffled)
    assert a2 == aggs and global_mos(a2) == g and delta_mos(a2, global_mos(a2)) == deltas
    by_w = {}
    for a in aggs:
        assert 1 <= a.avg_mos <= 5 and a.comment_count >= 1
        by_w.setdefault(a.window, []).append(a.avg_mos)
    for p in g:
        assert min(by_w[p.window]) - 1e-12 <= p.global_mos <= max(by_w[p.window]) + 1e-12
        assert abs(sum(d.delta for d in deltas if d.window == p.window)) <= 1e-9
    assert all(-4 <= d.delta <= 4 for d in deltas)


def _deltas(isp, values, start=0):
    return [DeltaPoint(win(start + i), isp, v) for i, v in enumerate(values) if v is not None]


def test_episode_example():
    eps = detect_episodes(_deltas("ISP3", [-0.1, -0.5, -0.6, -0.2]))
    assert len(eps) == 1
    e = eps[0]
    assert (e.first_window, e.last_window, e.min_delta, e.window_count) == (win(1), win(2), -0.6, 2)
    assert e.threshold == -0.4


def test_episode_boundaries():
    assert detect_episodes(_deltas("A", [0.0, -0.39, 0.5])) == []
    assert detect_episodes(_deltas("A", [-0.4])) == []
    assert len(detect_episodes(_deltas("A", [-0.41]))) == 1


def test_missing_window_breaks_run():
    eps = detect_episodes(_deltas("A", [-0.5, None, -0.5]))
    assert [(e.first_window, e.last_window) for e in eps] == [(win(0), win(0)), (win(2), win(2))]


def test_min_run():
    ds = _deltas("A", [-0.5, 0, -0.5, -0.6, -0.7])
    assert [e.window_count for e in detect_episodes(ds, min_run=2)] == [3]
    with pytest.raises(ValueError):
        detect_episodes(ds, min_run=0)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from(["A", "B"]),
                       st.lists(st.one_of(st.none(), st.floats(-2, 2)), max_size=20)),
       st.floats(-1, 0))
def test_episodes_match_run_scan(series, threshold):
    deltas = [d for isp, vals in series.items() for d in _deltas(isp, vals)]
    random.Random(0).shuffle(deltas)
    eps = detect_episodes(deltas, threshold)
    expected = []
    for isp in sorted(series):
        vals = series[isp]
        for a, b in run_scan(vals, threshold):
            expected.append((isp, win(a), win(b), min(vals[a:b + 1])))
    assert [(e.isp, e.first_window, e.last_window, e.min_delta) for e in eps] == expected
    for e in eps:
        assert e.window_count == (e.last_window.start - e.first_window.start) // W + 1


def test_compare_objective():
    subj = [agg_(0, "ISP1", 2.0), agg_(1, "ISP1", 3.0)]
    obj = [ObjectivePoint(win(0), "ISP1", 4.0), ObjectivePoint(win(2), "ISP1", 3.5)]
    out = compare_objective(subj, obj)
    assert [(d.window, d.discrepancy) for d in out] == [(win(0), -2.0), (win(1), None), (win(2), None)]
    assert out[1].subjective_mos == 3.0 and out[1].objective_mos is None
    same = compare_objective(subj, [ObjectivePoint(a.window, a.isp, a.avg_mos) for a in subj])
    assert all(d.discrepancy == 0.0 for d in same)
    with pytest.raises(WindowMismatchError):
        compare_objective(subj, [ObjectivePoint(WindowKey(T0, 2 * W), "ISP1", 4.0)])


def test_file_roundtrips(tmp_path):
    rng = random.Random(3)
    aggs = aggregate(_records(rng, 300))
    g = global_mos(aggs)
    d = delta_mos(aggs, g)
    eps = detect_episodes(d, threshold=-0.3)
    write_aggregates(aggs, tmp_path / "a.csv")
    write_globals(g, tmp_path / "g.csv")
    write_deltas(d, tmp_path / "d.csv")
    write_episodes(eps, tmp_path / "e.json")
    assert read_aggregates(tmp_path / "a.csv") == aggs
    assert read_globals(tmp_path / "g.csv") == g
    assert read_deltas(tmp_path / "d.csv") == d
    assert read_episodes(tmp_path / "e.json") == eps
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "time_window,isp,comment_count,avg_mos"


def test_read_objective(tmp_path):
    p = tmp_path / "o.csv"
    p.write_text("time_window,isp,objective_mos\n2024-01-01T12:00:00,ISP1,4.2\n")
    assert read_objective(p) == [ObjectivePoint(win(0), "ISP1", 4.2)]
    p.write_text("time_window,isp,mos\n2024-01-01T12:00:00,ISP1,4.2\n")
    with pytest.raises(ValueError):
        read_objective(p)
