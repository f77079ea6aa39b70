"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s``. Criterion 8 trains
three models on the synthetic chairs set and takes about half an hour on one
core; the rest finish in a few minutes.
"""
import itertools
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from test_tensor import _primitive_cases

from hierpart import data as D
from hierpart import estimators, evaluation, geometry, inference, oracles, sampling
from hierpart import tensor as T
from hierpart import train as TR
from hierpart.model import Model, ModelConfig

# frozen after the pilot run recorded in the decisions ledger
E2E_SEED = 0
E2E_TOP_OA = 0.95
E2E_MID_GAIN = 0.20
E2E_BUDGET_SECONDS = 15 * 60


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_gradients(report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        for fn, params in _primitive_cases(np.random.default_rng(seed)).values():
            worst = max(worst, T.finite_difference_check(fn, params).max_error)
        inst = oracles.tiny_instance(seed)
        noise = sampling.gumbel_noise((3, 4, 3), np.random.default_rng(seed))
        rep = T.finite_difference_check(
            lambda: estimators.pathwise_objective(
                inst.model, inst.points, inst.graph, inst.labels, 0.5, noise, training=False
            ),
            inst.model.parameters(),
        )
        worst = max(worst, rep.max_error)
    secs = time.perf_counter() - t0
    report(1, worst <= 1e-5 and secs < 60, f"max relative error {worst:.2e} over 20 seeds, {secs:.1f}s")


def test_criterion_2_exact_marginal_oracle(report):
    t0 = time.perf_counter()
    worst, bound_ok = 0.0, True
    for seed in range(100):
        inst = oracles.tiny_instance(seed)
        exact = oracles.exact_class_marginals(inst.model, inst.points, inst.graph)
        rng = np.random.default_rng(seed)
        mc, _ = inference.infer_top_mc(inst.model, inst.points, inst.graph, 200_000, rng, chunk=20_000)
        worst = max(worst, float(np.abs(mc - exact).max()))
        mpl, _ = inference.infer_top_mpl(inst.model, inst.points, inst.graph)
        bound_ok &= bool(np.all(mpl <= exact))
    secs = time.perf_counter() - t0
    ok = worst <= 0.005 and bound_ok and secs < 300
    report(2, ok, f"max |MC - exact| {worst:.4f}, MPL bound holds: {bound_ok}, {secs:.0f}s")


def test_criterion_3_reinforce_consistency(report):
    t0 = time.perf_counter()
    inst = oracles.tiny_instance(0)
    worst = {}
    for b in (1.0, None):
        worst[b] = min(oracles.reinforce_consistency(inst, 100_000, b, seed=1).values())
    secs = time.perf_counter() - t0
    ok = min(worst.values()) >= 0.99 and secs < 300
    report(3, ok, f"min block cosine B=1: {worst[1.0]:.4f}, no baseline: {worst[None]:.4f}, {secs:.0f}s")


def test_criterion_4_control_variate_identity(report):
    inst = oracles.tiny_instance(0)
    stats = oracles.control_variate_statistics(inst.model, inst.points, inst.graph, 100_000, seed=2)
    ok, worst = oracles.control_variate_ok(stats)
    report(4, ok, f"max |mean| / SE {worst:.2f} over {len(stats)} blocks, 2 projections each")


def test_criterion_5_samplers(report):
    rng = np.random.default_rng(5)
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    draws = sampling.gumbel_max_sample(np.tile(pi, (100_000, 1)), rng)
    pval = oracles.chi_square_pvalue(np.bincount(draws, minlength=4), pi)

    probs = rng.dirichlet(np.ones(5) * 0.5, size=20_000)
    simplex = max(
        float(np.abs(sampling.gumbel_softmax_sample(probs, tau, rng).data.sum(axis=1) - 1.0).max())
        for tau in (0.001, 0.01, 0.1, 1.0, 10.0)
    )
    sharp = sampling.gumbel_softmax_sample(rng.dirichlet(np.ones(4), size=100_000), 0.001, rng).data
    frac = float(np.mean(sharp.max(axis=1) > 0.999))
    flat = sampling.gumbel_softmax_sample(np.full((100_000, 4), 0.25), 10.0, rng).data
    tv = float(np.mean(0.5 * np.abs(flat - 0.25).sum(axis=1)))

    ok = pval > 0.001 and simplex <= 1e-12 and frac >= 0.99 and tv <= 0.05
    report(5, ok, f"chi-square p={pval:.3f}, simplex dev {simplex:.1e}, tau=0.001 sharp {frac:.4f}, tau=10 TV {tv:.4f}")


def test_criterion_6_assignment(report):
    rng = np.random.default_rng(6)
    agree = True
    for _ in range(1000):
        table = rng.integers(0, 50, size=rng.integers(1, 8, size=2))
        agree &= evaluation.hungarian_match(table)[1] == oracles.brute_force_agreement(table)
    invariant = True
    for _ in range(200):
        pred, true = rng.integers(7, size=100), rng.integers(7, size=100)
        base = evaluation.matched_accuracy(pred, true, 7, 7)
        invariant &= evaluation.matched_accuracy(rng.permutation(7)[pred], true, 7, 7) == base
    report(6, bool(agree and invariant), f"1000 tables match brute force: {agree}, relabel invariant: {invariant}")


def test_criterion_7_geometry(report):
    rng = np.random.default_rng(7)
    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    u = np.cross(normal, [1.0, 0.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    ab = rng.uniform(-1, 1, size=(300, 2))
    plane = ab[:, :1] * u + ab[:, 1:] * v
    est = geometry.estimate_normals(plane, geometry.build_knn(plane, 12))
    plane_err = float(np.linalg.norm(np.cross(est, normal), axis=1).max())

    knn_ok = True
    for m in (10, 100, 500):
        pts = rng.normal(size=(m, 3))
        k = min(16, m - 1)
        idx = geometry.build_knn(pts, k).indices
        for i in range(m):
            d = np.sum((pts - pts[i]) ** 2, axis=1)
            d[i] = -1.0
            knn_ok &= bool(np.array_equal(idx[i], np.argsort(d, kind="stable")[: k + 1]))

    pts = rng.normal(size=(400, 3)) * [1.0, 0.5, 0.1]
    rot = Rotation.random(random_state=8).as_matrix()
    n0 = geometry.estimate_normals(pts, geometry.build_knn(pts, 16))
    n1 = geometry.estimate_normals(pts @ rot.T, geometry.build_knn(pts @ rot.T, 16))
    rot_err = float(np.linalg.norm(np.cross(n0 @ rot.T, n1), axis=1).max())

    ok = plane_err <= 1e-9 and knn_ok and rot_err <= 1e-6
    report(7, ok, f"plane normal sin-angle {plane_err:.1e}, knn exact: {knn_ok}, rotation sin-angle {rot_err:.1e}")


@pytest.fixture(scope="module")
def chairs():
    clouds = [D.generate_object("chairs", D.object_seed(E2E_SEED, i)) for i in range(250)]
    return TR.Dataset.from_clouds(clouds[:200], clouds[200:], 16)


@pytest.fixture(scope="module")
def floor(chairs):
    model = Model.init(ModelConfig(4, 8), E2E_SEED)
    return TR.evaluate_model(model, chairs.test, "mpl")["mid_oa"]


@pytest.mark.slow
@pytest.mark.parametrize("estimator", ["mpl-ste", "mc-reinforce", "mc-pathwise"])
def test_criterion_8_end_to_end(report, chairs, floor, estimator):
    cfg = TR.TrainConfig(ModelConfig(4, 8, estimator=estimator), epochs=50, seed=E2E_SEED)
    t0 = time.perf_counter()
    res = TR.train(cfg, chairs, evaluate_every=0)
    secs = time.perf_counter() - t0
    ev = TR.evaluate_model(res.model, chairs.test, cfg.inference_mode, 100, seed=0)
    detail = (
        f"{estimator}: top OA {ev['top_oa']:.4f}, mid OA {ev['mid_oa']:.4f} "
        f"(floor {floor:.4f}, gain {ev['mid_oa'] - floor:+.4f}), trained in {secs / 60:.1f} min"
    )
    if estimator == "mc-reinforce":
        std5 = TR.evaluate_model(res.model, chairs.test, "mc", 5, seed=1, repeats=10)["top_oa_std"]
        std100 = TR.evaluate_model(res.model, chairs.test, "mc", 100, seed=1, repeats=10)["top_oa_std"]
        detail += f", MC std L=5 {std5:.5f} vs L=100 {std100:.5f}"
    else:
        std5, std100 = 1.0, 0.0
    ok = (
        ev["top_oa"] >= E2E_TOP_OA
        and ev["mid_oa"] - floor >= E2E_MID_GAIN
        and secs < E2E_BUDGET_SECONDS
        and std5 > std100
    )
    report(8, ok, detail)


def test_criterion_9_determinism_and_persistence(report, tmp_path):
    clouds = [D.generate_object("chairs", D.object_seed(9, i), 64) for i in range(6)]
    ds = TR.Dataset.from_clouds(clouds[:4], clouds[4:], 8)
    mc = ModelConfig(4, 4, encoder_widths=(16, 16), decoder_width=8, head_widths=(8,), k_nn=8,
                     estimator="mc-reinforce", num_samples=3)  # fmt: skip
    runs = [TR.train(TR.TrainConfig(mc, epochs=3, batch_size=2, seed=4, eval_samples=10), ds) for _ in range(2)]
    strip = [[{k: v for k, v in r.items() if k != "seconds"} for r in run.metrics] for run in runs]
    same_metrics = strip[0] == strip[1]

    path = tmp_path / "m.hpk"
    runs[0].model.save(path)
    loaded, _ = Model.load(path)
    same_eval = all(
        TR.evaluate_model(runs[0].model, ds.test, mode, 20, seed=3, repeats=3)
        == TR.evaluate_model(loaded, ds.test, mode, 20, seed=3, repeats=3)
        for mode in ("mpl", "mc")
    )

    cloud = D.generate_object("mixed", 11)
    D.write_cloud(tmp_path / "c.ptc", cloud)
    same_cloud = D.read_cloud(tmp_path / "c.ptc") == cloud
    ok = same_metrics and same_eval and same_cloud
    report(9, ok, f"metrics bit-exact: {same_metrics}, checkpoint eval bit-exact: {same_eval}, cloud round trip: {same_cloud}")


def test_brute_force_oracle_is_exhaustive():
    # sanity check of the assignment oracle used above
    table = np.array([[1, 9, 0], [8, 0, 0], [0, 0, 7]])
    best = max(table[np.arange(3), list(p)].sum() for p in itertools.permutations(range(3)))
    assert oracles.brute_force_agreement(table) == best == 24
