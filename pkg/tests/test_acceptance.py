"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line and adds it to the summary
shown at the end of the pytest run.
"""

import time

import numpy as np
import pytest

import live_fixture
import oracles
from conftest import ACCEPTANCE
from gradcheck import draw_kink_free_batch, numeric_grad, rel_error
from protocover.catalog import SyntheticSpec, generate_synthetic, query_reference_split
from protocover.cli import main
from protocover.errors import DegenerateBatch
from protocover.encoder import CatalogView, EncoderSpec, TrainConfig, encoder_forward, train
from protocover.evalmetrics import (
    RelevanceJudgment,
    average_precision,
    evaluate_lookup,
    mean_average_precision,
    mean_mt_at_k,
    mean_normalized_mt_at_k,
    mt_at_k,
    normalized_mt_at_k,
    r_precision,
)
from protocover.liveid import WindowingConfig, embed_windows, identify, identify_embeddings, window_concert, window_count
from protocover.metric import (
    EmbeddingBatch,
    TripletConfig,
    compute_prototypes,
    loss_prototypical,
    loss_standard,
    mine_semihard_prototypical,
    mine_semihard_standard,
)
from protocover.pitchrep import SalienceMatrix, downscale_frequency, preprocess, trim_octaves
from protocover.retrieval import CLASSES, SAMPLES, build_store

pytestmark = pytest.mark.acceptance


def report(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, detail


def linear_lookup_maps(seed, noise, loss, steps=2000):
    """Train a linear encoder on a synthetic catalog; MAP in both scoring modes."""
    cat, X = generate_synthetic(SyntheticSpec(n_works=200, feature_dim=32, work_separation=1.0,
                                              cover_noise=noise, transposition_max=2, seed=seed))
    cfg = TrainConfig(batch_classes=12, samples_per_class=3, steps=steps, learning_rate=0.01,
                      momentum=0.9, seed=seed, loss_kind=loss, triplet=TripletConfig(margin=1.0))
    params, _ = train(CatalogView.from_catalog(cat, X), EncoderSpec(32, (), 32, normalize_output=True), cfg)
    store = build_store(encoder_forward(params, X), cat.track_ids, cat.work_ids)
    queries, _ = query_reference_split(cat, np.random.default_rng(seed))
    return evaluate_lookup(store, queries, SAMPLES).map, evaluate_lookup(store, queries, CLASSES).map


def test_c1_gradient_fidelity():
    t0 = time.perf_counter()
    cfg = TripletConfig(margin=1.0)
    worst = {}
    n_batches = 200
    for kind, fn in (("standard", loss_standard), ("prototypical", loss_prototypical)):
        rng = np.random.default_rng(1)
        worst[kind] = 0.0
        for _ in range(n_batches):
            E, labels = draw_kink_free_batch(rng, kind, alpha=1.0, max_b=20, max_d=16)
            analytic = fn(EmbeddingBatch(E, labels), cfg).grad
            numeric = numeric_grad(fn, E, labels, cfg, h=1e-6)
            worst[kind] = max(worst[kind], float(rel_error(analytic, numeric).max()))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-5 and elapsed < 30
    report("C1 gradient fidelity", ok,
           f"{n_batches} batches per loss, max rel err standard {worst['standard']:.2e} "
           f"prototypical {worst['prototypical']:.2e} (<= 1e-5), {elapsed:.1f}s (< 30s)")


def test_c2_prototype_correctness():
    rng = np.random.default_rng(2)
    row_err = proto_err = matrix_err = 0.0
    for _ in range(1000):
        n_classes = int(rng.integers(1, 8))
        labels = rng.integers(0, n_classes, size=int(rng.integers(2, 30)))
        E = rng.normal(size=(labels.size, int(rng.integers(1, 17)))) * rng.uniform(0.1, 10)
        p = compute_prototypes(EmbeddingBatch(E, labels))
        order, means = oracles.class_means(E.tolist(), labels.tolist())
        assert p.class_ids == order
        row_err = max(row_err, float(np.abs(p.delta.sum(axis=1) - 1).max()))
        proto_err = max(proto_err, float(np.abs(p.prototypes - np.array(means)).max()))
        matrix_err = max(matrix_err, float(np.abs(p.prototypes - p.delta @ E).max()))
    ok = row_err <= 1e-12 and proto_err <= 1e-12 and matrix_err <= 1e-12
    report("C2 prototype correctness", ok,
           f"1000 batches, delta row-sum err {row_err:.1e}, mean-loop err {proto_err:.1e}, "
           f"delta@E err {matrix_err:.1e} (all <= 1e-12)")


def test_c3_mining_oracle():
    rng = np.random.default_rng(3)
    cfg = TripletConfig(margin=1.0)
    mismatches = {"standard": 0, "prototypical": 0}
    for i in range(500):
        n_classes = int(rng.integers(2, 7))
        labels = rng.integers(0, n_classes, size=int(rng.integers(4, 25)))
        if np.unique(labels).size < 2:
            labels[0] = (labels[0] + 1) % n_classes
        # coarse grid values make band-edge equalities and distance ties frequent
        E = np.round(rng.normal(size=(labels.size, int(rng.integers(1, 5)))) * 2) / 2
        b = EmbeddingBatch(E, labels)
        want = oracles.mine_standard(E.tolist(), labels.tolist(), 1.0)
        try:
            got = mine_semihard_standard(b, cfg).as_tuples()
        except DegenerateBatch:
            got = []  # the oracle finds no anchor-positive pair either
        mismatches["standard"] += got != want
        got = mine_semihard_prototypical(b, compute_prototypes(b), cfg).as_tuples()
        mismatches["prototypical"] += got != oracles.mine_prototypical(E.tolist(), labels.tolist(), 1.0)
    ok = sum(mismatches.values()) == 0
    report("C3 mining oracle", ok,
           f"500 batches (B <= 24), mismatches standard {mismatches['standard']} "
           f"prototypical {mismatches['prototypical']}")


def test_c4_metric_oracles():
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(1000):
        n_q = int(rng.integers(1, 8))
        js, lists, totals = [], [], []
        for _ in range(n_q):
            bits = (rng.random(int(rng.integers(1, 40))) < rng.uniform(0.05, 0.6)).tolist()
            total = sum(bits) + int(rng.integers(0 if sum(bits) else 1, 4))
            js.append(RelevanceJudgment(np.array(bits, dtype=bool), total))
            lists.append(bits)
            totals.append(total)
        bad += mean_average_precision(js) != oracles.mean([oracles.average_precision(b, t) for b, t in zip(lists, totals)])
        bad += mean_mt_at_k(js) != oracles.mean([oracles.mt_at_k(b, 10) for b in lists])
        bad += mean_normalized_mt_at_k(js) != oracles.mean(
            [oracles.normalized_mt_at_k(b, 10, t) for b, t in zip(lists, totals)])
        bad += mean_normalized_mt_at_k(js, mode=CLASSES) != oracles.mean(
            [oracles.normalized_mt_at_k(b, 10, 1) for b in lists])
        for j, b, t in zip(js, lists, totals):
            bad += average_precision(j) != oracles.average_precision(b, t)
            bad += mt_at_k(j) != oracles.mt_at_k(b, 10)
            bad += normalized_mt_at_k(j) != oracles.normalized_mt_at_k(b, 10, t)
        pool = [f"t{i}" for i in range(30)]
        truth = set(rng.choice(pool, size=int(rng.integers(1, 10)), replace=False).tolist())
        cands = rng.permutation(pool)[: int(rng.integers(0, 30))].tolist()
        bad += r_precision(cands, truth) != oracles.r_precision(cands, truth)
    worked = average_precision(RelevanceJudgment(np.array([True, False, True]), 2))
    ok = bad == 0 and worked == 5 / 6
    report("C4 metric oracles", ok, f"1000 fixtures, {bad} mismatches, AP(ranks 1,3 of 2) = {worked!r} (5/6 = {5 / 6!r})")


def test_c5_end_to_end_synthetic_lookup():
    t0 = time.perf_counter()
    samples_map, classes_map = linear_lookup_maps(seed=0, noise=0.1, loss="prototypical")
    elapsed = time.perf_counter() - t0
    ok = samples_map >= 0.9 and classes_map >= 0.9 and elapsed < 120
    report("C5 end-to-end synthetic lookup", ok,
           f"samples MAP {samples_map:.4f}, classes MAP {classes_map:.4f} (both >= 0.9), {elapsed:.1f}s (< 120s)")


def test_c6_direction_check():
    maps = {"standard": [], "prototypical": []}
    for seed in range(5):
        for loss in maps:
            maps[loss].append(linear_lookup_maps(seed=seed, noise=1 / 3, loss=loss))
    std, proto = np.array(maps["standard"]), np.array(maps["prototypical"])
    wins = int(np.sum(proto[:, 1] > std[:, 1]))
    ok = proto[:, 0].mean() >= std[:, 0].mean() - 0.01 and wins >= 4
    report("C6 direction check", ok,
           f"samples mean MAP proto {proto[:, 0].mean():.4f} vs standard {std[:, 0].mean():.4f} (>= std - 0.01); "
           f"classes wins {wins}/5 (>= 4), means {proto[:, 1].mean():.4f} vs {std[:, 1].mean():.4f}")


def _runs(ids):
    out, i = [], 0
    while i < len(ids):
        j = i
        while j + 1 < len(ids) and ids[j + 1] == ids[i]:
            j += 1
        out.append((ids[i], j - i + 1))
        i = j + 1
    return out


def test_c7_live_id_fixture():
    concert, store, params, truth, emb = live_fixture.build(seed=0, n_songs=8, n_refs=500)
    cfg = WindowingConfig()
    problems = []

    res = identify(concert, store, params, cfg)
    if len(res.matches) != window_count(concert.duration, cfg):
        problems.append("window count")
    rp_clean = r_precision(res.candidate_ids, truth)

    # splice two windows of an unplayed reference in at every song change
    frames = embed_windows(window_concert(concert, cfg), params)
    ids = [m.best_ref_id for m in res.matches]
    confusers = [i for i in range(len(store)) if store.track_ids[i] not in set(truth)]
    rows, spliced, inserted = list(frames), [], []
    cut = [k for k in range(1, len(ids)) if ids[k] in truth and ids[k - 1] != ids[k]]
    for k in range(len(rows)):
        if k in cut:
            c = confusers[len(inserted)]
            inserted.append(store.track_ids[c])
            spliced += [emb[c], emb[c]]
        spliced.append(rows[k])
    res2 = identify_embeddings(np.array(spliced), store, cfg)
    rp_spliced = r_precision(res2.candidate_ids, truth)
    if set(inserted) & set(res2.candidate_ids):
        problems.append("inserted pair kept")

    for r in (res, res2):
        if any(run.run_length < 3 for run in r.runs):
            problems.append("short run emitted")
        long_ids = {ref for ref, n in _runs([m.best_ref_id for m in r.matches]) if n >= 3}
        if set(r.candidate_ids) != long_ids:
            problems.append("candidates differ from runs of >= 3 frames")
    short = sorted({ref for ref, n in _runs(ids) + _runs([m.best_ref_id for m in res2.matches]) if n < 3})

    formula_bad = 0
    for T in np.random.default_rng(7).uniform(180, 4000, size=2000).tolist() + [180.0, 210.0, 240.0, 2400.0]:
        formula_bad += window_count(T, cfg) != int(np.floor((T - 180) / 30 + 1e-9)) + 1
    for T in (180.0, 240.0, 600.0):
        m = SalienceMatrix(np.ones((int(T), 5)), 5, 1.0)
        formula_bad += len(window_concert(m, cfg)) != int((T - 180) // 30) + 1

    ok = rp_clean == 1.0 and rp_spliced == 1.0 and not problems and formula_bad == 0
    report("C7 live-id fixture", ok,
           f"8 songs, 500 refs, {len(res.matches)} windows; R-precision {rp_clean} clean, {rp_spliced} with "
           f"{len(inserted)} inserted 2-frame pairs; sub-3 runs excluded ({len(short)} distinct refs); "
           f"window-count mismatches {formula_bad}" + (f"; problems: {problems}" if problems else ""))


def test_c8_preprocessing_shape():
    rng = np.random.default_rng(8)
    shape = preprocess(SalienceMatrix(rng.uniform(size=(5120, 360)), 5)).shape
    mass_err, locality_bad = 0.0, 0
    for _ in range(100):
        frames, semis = int(rng.integers(1, 300)), int(rng.integers(12, 80))
        m = SalienceMatrix(rng.uniform(size=(frames, semis * 5)) * rng.uniform(0.1, 5), 5)
        down = downscale_frequency(m, 5)
        mass_err = max(mass_err, abs(down.data.sum() * 5 - m.data.sum()) / m.data.sum())
        center = float(rng.uniform(-20, semis * 5 + 20))
        n_oct = int(rng.integers(1, 7))
        out = trim_octaves(m, center, n_oct).data
        start = int(np.floor(center + 0.5)) - n_oct * 30
        for j in range(out.shape[1]):
            src = start + j
            expect = m.data[:, src] if 0 <= src < m.bins else np.zeros(frames)
            locality_bad += not np.array_equal(out[:, j], expect)
    ok = shape == (1024, 60) and mass_err <= 1e-12 and locality_bad == 0
    report("C8 preprocessing shape", ok,
           f"5120x360 -> {shape[0]}x{shape[1]}; 100 inputs: max relative mass error {mass_err:.1e}, "
           f"trim locality violations {locality_bad}")


def test_c9_cli_determinism(tmp_path):
    def pipeline(out):
        argv = [
            ["synth", "--works", "60", "--dim", "16", "--transposition-max", "1", "--seed", "5", "--out", out],
            ["train", "--catalog", f"{out}/catalog.csv", "--steps", "200", "--embed-dim", "16",
             "--normalize", "true", "--seed", "5", "--out", out],
            ["embed", "--catalog", f"{out}/catalog.csv", "--model", f"{out}/model.enc", "--out", out],
            ["eval-lookup", "--embeddings", f"{out}/embeddings.emb", "--seed", "5", "--out", out],
        ]
        return [main(a) for a in argv]

    codes = pipeline(str(tmp_path / "a")) + pipeline(str(tmp_path / "b"))
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    differ = [f for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = codes == [0] * 8 and not differ and len(files) >= 8
    report("C9 CLI determinism", ok,
           f"synth -> train -> embed -> eval-lookup twice: {len(files)} files, "
           f"{len(differ)} differ{' ' + str(differ) if differ else ''}, exit codes {sorted(set(codes))}")
