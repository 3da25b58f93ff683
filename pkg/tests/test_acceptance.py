"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
Criteria 5, 6, 7 and 9 share the models trained by the session fixture.
"""

import math
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from hetgraph.analysis import confidence_by_depth
from hetgraph.config import RunConfig
from hetgraph.data import carve_validation
from hetgraph.evaluation import GroundTruth, MatchRule, evaluate, key_recall_at_k, recall_at_k, write_report
from hetgraph.het import build_het
from hetgraph.losses import cross_entropy_loss, margin_ranking_loss
from hetgraph.maps import compute_area_map
from hetgraph.model import HetModel, PredictionSet, RankedRelation, candidate_pairs_ep, candidate_pairs_sp
from hetgraph.scene import BoundingBox, Entity, SceneRecord
from hetgraph.synth import SynthConfig, generate_dataset, generate_scene, make_world
from hetgraph.training import train_loop

from oracles import model_gradient_errors, random_scene, reference_area_map, reference_het, \
    reference_recall, tree_signature

pytestmark = pytest.mark.slow


# -- 1. HET oracle ---------------------------------------------------------------

def test_c01_het_matches_reference(verdict):
    rng = np.random.default_rng(2024)
    scenes = [random_scene(rng, n_max=20) for _ in range(1000)]
    expected = {(k, s, t): reference_het(sc, t, s) for k, sc in enumerate(scenes)
                for s in ("afs", "ifs") for t in (0.5, 0.9)}
    start = time.perf_counter()
    mismatches = sum(tree_signature(build_het(sc, t, s)) != expected[(k, s, t)]
                     for k, sc in enumerate(scenes) for s in ("afs", "ifs") for t in (0.5, 0.9))
    elapsed = time.perf_counter() - start
    ok = verdict("C1 HET oracle equivalence", mismatches == 0 and elapsed < 5.0,
                 f"{mismatches} mismatches over 4000 trees, {elapsed:.2f}s (limit 5s)")
    assert ok


# -- 2. area map -------------------------------------------------------------------

def test_c02_area_map_matches_reference(verdict):
    rng = np.random.default_rng(7)
    scenes = []
    for k in range(300):
        w, h = int(rng.integers(1, 65)), int(rng.integers(1, 65))
        ents = []
        for i in range(int(rng.integers(0, 12))):
            x0, x1 = sorted(rng.uniform(0, w, 2))
            y0, y1 = sorted(rng.uniform(0, h, 2))
            if rng.random() < 0.3:
                x0, x1, y0, y1 = (float(round(v)) for v in (x0, x1, y0, y1))
            if x1 > x0 and y1 > y0:
                ents.append(Entity(i + 1, BoundingBox(x0, y0, x1, y1), np.array([1.0]), np.zeros(1)))
        scenes.append(SceneRecord(f"a{k}", w, h, tuple(ents)))
    expected = [reference_area_map(s) for s in scenes]
    start = time.perf_counter()
    bad = sum(not np.array_equal(compute_area_map(s), e) for s, e in zip(scenes, expected))
    elapsed = time.perf_counter() - start
    ok = verdict("C2 area-map equivalence", bad == 0 and elapsed < 10.0,
                 f"{bad} mismatching maps of 300, {elapsed:.2f}s (limit 10s)")
    assert ok


# -- 3. gradient check -------------------------------------------------------------

def test_c03_gradient_integrity(verdict):
    world = make_world(SynthConfig(min_entities=6, max_entities=6))
    scene = next(s for s in (generate_scene(world, k) for k in range(200))
                 if build_het(s, 0.9, "ifs").max_depth() == 4)  # root plus three entity levels
    cfg = RunConfig.desk(hidden=3, embedding=3, mlp_hidden=4, rrm_hidden=3, rrm_fc=3, geo_dim=2,
                         feature_channels=2, feature_grid=4, roi_bins=(2, 2), sample_pairs=8)
    model = HetModel(cfg, 8, 6)
    rng = np.random.default_rng(0)
    for _, t in model.params.items():
        t.data += 0.1 * rng.standard_normal(t.data.shape)
    start = time.perf_counter()
    errors = model_gradient_errors(model, [model.prepare(scene, "sgcls")])
    elapsed = time.perf_counter() - start
    name, worst = max(errors.items(), key=lambda kv: kv[1])
    ok = verdict("C3 gradient integrity", worst < 1e-4 and elapsed < 120.0,
                 f"{len(errors)} parameters, worst relative error {worst:.2e} ({name}), "
                 f"{elapsed:.1f}s (limit 120s)")
    assert ok


# -- 4. metric oracle --------------------------------------------------------------

def test_c04_recall_matches_reference(verdict):
    rng = np.random.default_rng(99)
    cases = []
    for _ in range(200):
        n = int(rng.integers(2, 8))
        labels = {i: int(rng.integers(0, 3)) for i in range(1, n + 1)}
        plabels = {i: (int(rng.integers(0, 3)) if rng.random() < 0.15 else v) for i, v in labels.items()}

        def trip():
            s, o = rng.choice(n, 2, replace=False) + 1
            return int(s), int(o), int(rng.integers(1, 4))
        g = [trip() for _ in range(int(rng.integers(0, 10)))]
        keys = [k for k in range(len(g)) if rng.random() < 0.3]
        p = [trip() for _ in range(int(rng.integers(0, 120)))]
        cases.append((g, keys, p, labels, plabels))
    start = time.perf_counter()
    checks = bad = 0
    for g, keys, p, labels, plabels in cases:
        rels = [RankedRelation(s, o, q, 1, 1, 1, 1, 1, -k) for k, (s, o, q) in enumerate(p)]
        pred = PredictionSet("x", rels, plabels, {}, {})
        gt = GroundTruth(tuple((s, o, q, k in keys) for k, (s, o, q) in enumerate(g)), labels, {})
        key_triplets = [g[k] for k in keys]
        for k in (1, 5, 20, 50, 100):
            for rule in (MatchRule.TRIPLET, MatchRule.TUPLE):
                checks += 2
                bad += recall_at_k(pred, gt, k, rule) != reference_recall(p, plabels, g, labels, k, rule.value)
                bad += key_recall_at_k(pred, gt, k, rule) != reference_recall(p, plabels, key_triplets, labels,
                                                                              k, rule.value)
    elapsed = time.perf_counter() - start
    ok = verdict("C4 metric oracle", bad == 0 and elapsed < 5.0,
                 f"{bad} mismatches in {checks} comparisons, {elapsed:.2f}s (limit 5s)")
    assert ok


# -- shared desk-scale pipeline ----------------------------------------------------

DATA_CONFIG = SynthConfig(num_classes=8, num_predicates=5)


def desk_pipeline(out_dir, rrm=True):
    """Train on 200 seeded scenes (20 carved for validation) and evaluate on 50 more."""
    train_all = generate_dataset(DATA_CONFIG, 200, seed=1)
    test = generate_dataset(DATA_CONFIG, 50, seed=2).scenes
    train, val = carve_validation(train_all.scenes)
    cfg = RunConfig.desk(rrm=rrm)
    start = time.perf_counter()
    with threadpool_limits(1):
        res = train_loop(train, cfg, train_all.vocab.num_classes, train_all.vocab.num_predicates,
                         validation=val, checkpoint=str(out_dir / "model"))
        model = res.model
        prepared = [model.prepare(s) for s in test]
        report = evaluate(model, test, "predcls", "ep", (20, 50, 100), (1, 5), prepared=prepared)
        write_report(report, out_dir / "report.json")
    return {"result": res, "model": model, "test": test, "prepared": prepared, "report": report,
            "seconds": time.perf_counter() - start, "dir": out_dir}


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    return desk_pipeline(tmp_path_factory.mktemp("rrm"), rrm=True)


@pytest.fixture(scope="session")
def baseline(tmp_path_factory):
    return desk_pipeline(tmp_path_factory.mktemp("plain"), rrm=False)


# -- 5. ranker effect --------------------------------------------------------------

def test_c05_ranker_effect(verdict, trained, baseline):
    r20 = trained["report"]["metrics"]["triplet"]["R@20"]
    kr_rrm = trained["report"]["metrics"]["triplet"]["kR@1"]
    kr_plain = baseline["report"]["metrics"]["triplet"]["kR@1"]
    seconds = trained["seconds"] + baseline["seconds"]
    ok = verdict("C5 ranker effect", r20 >= 0.80 and kr_rrm - kr_plain >= 0.20 and seconds <= 600,
                 f"R@20 {r20:.3f} (>= 0.80), kR@1 {kr_rrm:.3f} vs {kr_plain:.3f} without ranker "
                 f"(gap {kr_rrm - kr_plain:+.3f}, need >= 0.20), {seconds:.0f}s for both runs (limit 600s)")
    assert ok


# -- 6. depth monotonicity ---------------------------------------------------------

def test_c06_confidence_falls_with_depth(verdict, trained):
    start = time.perf_counter()
    model, prepared = trained["model"], trained["prepared"]
    preds = model.predict(prepared)
    conf = confidence_by_depth(preds, [p.tree for p in prepared], samples_per_depth=200, repeats=5, seed=0)
    elapsed = time.perf_counter() - start
    means = [conf.get(d, {}).get("mean", math.nan) for d in (2, 3, 4)]
    ok = verdict("C6 depth monotonicity", means[0] > means[1] > means[2] and elapsed < 60,
                 "mean phi by depth 2/3/4 = " + " / ".join(f"{m:.4f}" for m in means)
                 + f", {elapsed:.1f}s")
    assert ok


# -- 7. SP versus EP ---------------------------------------------------------------

def test_c07_structured_pairs(verdict, trained):
    start = time.perf_counter()
    model, test, prepared = trained["model"], trained["test"], trained["prepared"]
    subsets = all(set(candidate_pairs_sp(p.tree)) <= set(candidate_pairs_ep(p.order)) for p in prepared)
    sp = evaluate(model, test, "predcls", "sp", (20,), (1,), prepared=prepared)
    ep = trained["report"]
    elapsed = time.perf_counter() - start
    kr_sp, kr_ep = sp["metrics"]["triplet"]["kR@1"], ep["metrics"]["triplet"]["kR@1"]
    ok = verdict("C7 SP vs EP", subsets and sp["meanCandidates"] <= ep["meanCandidates"]
                 and kr_sp >= 0.8 * kr_ep and elapsed < 120,
                 f"subsets {subsets}, candidates {sp['meanCandidates']:.1f} vs {ep['meanCandidates']:.1f}, "
                 f"kR@1 {kr_sp:.3f} vs {kr_ep:.3f} (need >= {0.8 * kr_ep:.3f}), {elapsed:.1f}s")
    assert ok


# -- 8. threshold trend ------------------------------------------------------------

def test_c08_threshold_trend(verdict):
    rng = np.random.default_rng(8)
    scenes = [random_scene(rng, n_max=20) for _ in range(500)]
    start = time.perf_counter()
    stats = {}
    for t in (0.3, 0.9):
        trees = [build_het(s, t, "ifs") for s in scenes]
        stats[t] = (np.mean([tr.max_depth() for tr in trees]), np.mean([tr.mean_branching() for tr in trees]))
    elapsed = time.perf_counter() - start
    (d_lo, b_lo), (d_hi, b_hi) = stats[0.3], stats[0.9]
    ok = verdict("C8 threshold trend", d_hi < d_lo and b_hi > b_lo and elapsed < 10,
                 f"depth {d_hi:.3f} at T=0.9 vs {d_lo:.3f} at T=0.3, branching {b_hi:.3f} vs {b_lo:.3f}, "
                 f"{elapsed:.2f}s")
    assert ok


# -- 9. determinism ----------------------------------------------------------------

def test_c09_determinism(verdict, trained, tmp_path):
    desk_pipeline(tmp_path, rrm=True)
    same = {name: (trained["dir"] / name).read_bytes() == (tmp_path / name).read_bytes()
            for name in ("model.bin", "model.json", "report.json")}
    ok = verdict("C9 determinism", all(same.values()),
                 ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
    assert ok


# -- 10. loss unit values ----------------------------------------------------------

def test_c10_loss_values(verdict):
    ce, _ = cross_entropy_loss(np.array([[0.5, 0.5]]), [0])
    hinge = margin_ranking_loss([(0, 1)], [0.3, 0.2], gamma=0.5)
    ok = verdict("C10 loss unit values", abs(ce - math.log(2)) < 1e-9 and abs(hinge - 0.4) < 1e-9,
                 f"cross-entropy {ce:.12f} (ln 2), hinge {hinge:.12f} (0.4)")
    assert ok
