import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protocover.errors import EmptyStore, TooShort
from protocover.evalmetrics import r_precision
from protocover.liveid import (
    CandidateRun,
    FrameMatch,
    WindowingConfig,
    filter_runs,
    identify,
    identify_embeddings,
    match_frames,
    rank_candidates,
    window_concert,
    window_count,
    write_candidates,
    write_timeline,
)
from protocover.pitchrep import SalienceMatrix
from protocover.retrieval import build_store


def seq(ids):
    return [FrameMatch(i, 30.0 * i, r, 0.5) for i, r in enumerate(ids)]


def concert_of(seconds, fps=1.0):
    return SalienceMatrix(np.ones((int(round(seconds * fps)), 5)), 5, fps)


class TestWindowing:
    def test_single(self):
        assert len(window_concert(concert_of(180))) == 1

    def test_240_seconds(self):
        c = SalienceMatrix(np.arange(240.0)[:, None] * np.ones((1, 5)), 5, 1.0)
        w = window_concert(c)
        assert [m.data[0, 0] for m in w] == [0.0, 30.0, 60.0]
        assert all(m.frames == 180 for m in w)

    def test_too_short(self):
        with pytest.raises(TooShort):
            window_concert(concert_of(179))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(180.0, 5000.0), st.sampled_from([(180.0, 30.0), (60.0, 15.0), (90.0, 90.0)]))
    def test_count_formula(self, T, wh):
        cfg = WindowingConfig(*wh)
        if T < cfg.window_seconds:
            return
        assert window_count(T, cfg) == int(np.floor((T - wh[0]) / wh[1] + 1e-9)) + 1
        # every window lies inside the concert
        n = window_count(T, cfg)
        assert (n - 1) * wh[1] + wh[0] <= T + 1e-6


class TestMatchFrames:
    def test_exact(self, rng):
        E = rng.normal(size=(5, 3))
        s = build_store(E, list("abcde"), list("abcde"))
        m = match_frames(E[[3]], s)
        assert m[0].best_ref_id == "d" and m[0].best_distance == 0.0

    def test_orthogonal(self):
        s = build_store(np.eye(2), ["x", "y"], ["x", "y"])
        m = match_frames(np.array([[0.9, 0.1], [0.2, 0.7]]), s)
        assert [f.best_ref_id for f in m] == ["x", "y"]

    def test_argmin_oracle(self, rng, backend):
        refs = rng.normal(size=(50, 4))
        ids = [f"r{i:02d}" for i in range(50)]
        s = build_store(refs, ids, ids)
        F = rng.normal(size=(10, 4))
        got = [f.best_ref_id for f in match_frames(F, s)]
        want = [ids[int(np.argmin(np.linalg.norm(refs - f, axis=1)))] for f in F]
        assert got == want

    def test_empty_store(self):
        s = build_store(np.zeros((0, 2)), [], [])
        with pytest.raises(EmptyStore):
            match_frames(np.zeros((1, 2)), s)


class TestFilterRuns:
    def test_length_two_dropped(self):
        assert filter_runs(seq("aab")) == []

    def test_length_three_kept(self):
        runs = filter_runs(seq("bbbaa"))
        assert [(r.ref_id, r.first_frame, r.run_length) for r in runs] == [("b", 0, 3)]

    def test_alternating(self):
        assert filter_runs(seq("abababab")) == []

    def test_repeated_reference(self):
        runs = filter_runs(seq("aaabaaaa"))
        assert [(r.ref_id, r.first_frame, r.run_length) for r in runs] == [("a", 0, 3), ("a", 4, 4)]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from("abc"), max_size=40), st.integers(1, 5))
    def test_runs_are_maximal_and_monotone(self, ids, k):
        runs = filter_runs(seq(ids), k)
        assert all(r.run_length >= k for r in runs)
        for r in runs:
            block = ids[r.first_frame:r.first_frame + r.run_length]
            assert set(block) == {r.ref_id}
            assert r.first_frame == 0 or ids[r.first_frame - 1] != r.ref_id
            end = r.first_frame + r.run_length
            assert end == len(ids) or ids[end] != r.ref_id
        wider = {c.ref_id for c in rank_candidates(filter_runs(seq(ids), k + 1))}
        assert wider <= {c.ref_id for c in rank_candidates(runs)}


class TestRankCandidates:
    def test_single(self):
        assert [c.ref_id for c in rank_candidates([CandidateRun("a", 0, 3, 0.2)])] == ["a"]

    def test_closer_first(self):
        runs = [CandidateRun("b", 0, 3, 0.4), CandidateRun("a", 5, 3, 0.1)]
        assert [c.ref_id for c in rank_candidates(runs)] == ["a", "b"]

    def test_walkthrough(self):
        runs = [
            CandidateRun("c", 0, 3, 0.3),
            CandidateRun("a", 3, 4, 0.5),
            CandidateRun("b", 7, 5, 0.3),   # same distance as c, longer run
            CandidateRun("a", 12, 6, 0.2),  # a merges to (0.2, 6)
            CandidateRun("d", 18, 5, 0.3),  # ties b on both keys, loses on id
        ]
        got = [(c.ref_id, c.best_distance, c.run_length) for c in rank_candidates(runs)]
        assert got == [("a", 0.2, 6), ("b", 0.3, 5), ("d", 0.3, 5), ("c", 0.3, 3)]


def step_store(rng, n=20, d=6):
    E = rng.normal(size=(n, d))
    ids = [f"s{i:02d}" for i in range(n)]
    return build_store(E, ids, ids), E


class TestIdentifyEmbeddings:
    def test_played_set_recovered(self, rng):
        store, E = step_store(rng)
        frames = np.repeat(E[[4, 9, 2]], [3, 5, 4], axis=0)
        res = identify_embeddings(frames, store)
        # all at distance 0, so longer runs rank first
        assert res.candidate_ids == ["s09", "s02", "s04"]
        assert r_precision(res.candidate_ids, {"s02", "s04", "s09"}) == 1.0

    def test_spurious_pair_excluded(self, rng):
        store, E = step_store(rng)
        frames = np.concatenate([np.repeat(E[[4]], 4, 0), np.repeat(E[[7]], 2, 0), np.repeat(E[[9]], 3, 0)])
        res = identify_embeddings(frames, store)
        assert "s07" not in res.candidate_ids and sorted(res.candidate_ids) == ["s04", "s09"]

    def test_noise_far_away(self, rng):
        store, _ = step_store(rng)
        frames = np.repeat(rng.normal(size=(1, 6)) + 100.0, 6, axis=0)
        res = identify_embeddings(frames, store)
        assert res.runs
        assert r_precision(res.candidate_ids, {"s00", "s01"}) == 0.0

    def test_store_order_irrelevant(self, rng):
        store, E = step_store(rng)
        frames = np.repeat(E[[1, 3, 5]], 3, axis=0) + rng.normal(scale=0.05, size=(9, 6))
        perm = rng.permutation(len(store))
        shuffled = build_store(E[perm], [store.track_ids[i] for i in perm], [store.work_ids[i] for i in perm])
        a, b = identify_embeddings(frames, store), identify_embeddings(frames, shuffled)
        assert a.candidate_ids == b.candidate_ids

    def test_exports(self, rng, tmp_path):
        store, E = step_store(rng)
        frames = np.repeat(E[[4, 9]], 3, axis=0)
        res = identify_embeddings(frames, store)
        write_candidates(res, tmp_path / "c.csv", ["s04", "s11"])
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows[0] == ["rank", "ref_id", "best_distance", "run_length", "correct"]
        assert [(r[1], r[4]) for r in rows[1:]] == [("s04", "1"), ("s09", "0")]
        write_timeline(res, store, tmp_path / "t.csv", ["s04", "s11"])
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["ref_id", "0.0", "30.0", "60.0", "90.0", "120.0", "150.0"]
        assert [r[0] for r in rows[1:]] == ["s04", "s09", "s11"]
        assert float(rows[1][1]) == 0.0


def test_identify_constructed_concert():
    import live_fixture

    c, store, params, truth, _ = live_fixture.build(n_songs=3, n_refs=40)
    res = identify(c, store, params)
    assert len(res.matches) == window_count(c.duration, WindowingConfig())
    assert r_precision(res.candidate_ids, truth) == 1.0
    assert set(res.candidate_ids) == set(truth)
