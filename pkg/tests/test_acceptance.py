"""Acceptance criteria 1-8, each with its runtime budget.

Every test prints one ``criterion N PASS/FAIL`` line; the lines are repeated
in the pytest terminal summary.  Criteria 4, 6 and 7 render and train at
128x128 and take minutes; the criterion 7 dataset is cached across runs in
the pytest cache directory.
"""

import os
import time

import numpy as np
import pytest

import test_bimodal_net as tb
import test_camera as tc
import test_evaluation as te
import test_losses as tl
import test_pose_algebra as tp
from colonpose.bimodal_net.infer import predict_trajectory
from colonpose.bimodal_net.model import MODES, BimodalConfig
from colonpose.bimodal_net.train import TrainConfig, direction_accuracy_on, make_pairs, train
from colonpose.camera import Intrinsics, backproject_depth
from colonpose.cli import main
from colonpose.evaluation import evaluate_direction, histogram, manhattan_histogram_loss, step_tz
from colonpose.pose_algebra import compose, handedness_convert, random_pose, relative
from colonpose.simgen.dataset import DatasetManifest, generate, load_trajectory, summarize
from colonpose.simgen.path import TrajectoryConfig, sample_camera_path
from colonpose.simgen.render import FAR_DEPTH, render_frame
from colonpose.simgen.scene import make_scene
from colonpose.warpstudy import run_study, summarize as study_summary

pytestmark = pytest.mark.slow

K128 = Intrinsics.default(128)


# ---- 1: geometry -----------------------------------------------------------------------------

def test_criterion_1_geometry(criterion):
    c = criterion(1, "geometry suite, 1e4 cases per law", 30)
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        a, b, d = random_pose(rng), random_pose(rng), random_pose(rng)
        assert compose(compose(a, b), d).allclose(compose(a, compose(b, d)), atol=1e-9)
        assert compose(a, relative(a, b)).allclose(b, atol=1e-9)
        assert compose(a, a.inverse()).allclose(compose(a.inverse(), a), atol=1e-12)
        assert handedness_convert(handedness_convert(a)).allclose(a, atol=1e-12)
    tp.test_log_exp_roundtrip_10k()
    tc.test_projective_roundtrips_10k()
    assert c.elapsed < c.budget_s
    c.finish(True)


# ---- 2: warping oracle ---------------------------------------------------------------------

def test_criterion_2_warping(criterion):
    c = criterion(2, "warping oracle: identity, fronto-parallel plane, occlusion", 10)
    tc.test_warp_identity()
    tc.test_fronto_parallel_projected_depth(-2.0, 12.0)
    tc.test_fronto_parallel_projected_depth(2.0, 8.0)
    tc.test_occluded_content_is_not_retrievable()
    assert c.elapsed < c.budget_s
    c.finish(True)


# ---- 3: metric oracles ---------------------------------------------------------------------------

def test_criterion_3_metrics(criterion):
    c = criterion(3, "metric oracles: scale, RTE, ROT, ATE", 5)
    te.test_scale_examples()
    te.test_rte_rot_examples()
    te.test_ate_examples()
    assert c.elapsed < c.budget_s
    c.finish(True)


# ---- 4: generator statistics ---------------------------------------------------------------------

def test_criterion_4_generator(criterion):
    c = criterion(4, "generator statistics", 120)
    scene = make_scene(0)
    s = summarize(sample_camera_path(scene, TrajectoryConfig(n_frames=1000, seed=0)), k=5)
    assert s["bimodal"] and s["frac_neg"] >= 0.3 and s["frac_pos"] >= 0.3
    assert s["mode_neg"] < 0 < s["mode_pos"]
    t3 = summarize(sample_camera_path(scene, TrajectoryConfig.calibrated(n_frames=1000, seed=0)), k=5)
    assert abs(t3["mean_step_cm"] - 0.44) <= 0.15 * 0.44, t3
    assert abs(t3["mean_rotation_deg"] - 4.6) <= 0.2 * 4.6, t3
    traj = sample_camera_path(scene, TrajectoryConfig(n_frames=200, seed=1))
    on = []
    for pose in traj.poses[::20]:
        _, d = render_frame(scene, pose, K128)
        hit = d.values < FAR_DEPTH
        world = backproject_depth(d.values, K128) @ pose.rotation.T + pose.translation
        on.append(np.mean(scene.surface_distance(world[hit]) < 1e-2 * scene.base_radius))
    c.detail = (f"modes {s['mode_neg']:+.2f}/{s['mode_pos']:+.2f} cm mass {s['frac_neg']:.2f}/{s['frac_pos']:.2f}; "
                f"calibrated step {t3['mean_step_cm'] * 10:.2f} mm rot {t3['mean_rotation_deg']:.2f} deg; "
                f"on-surface {min(on):.4f}")
    assert min(on) >= 0.99
    assert c.elapsed < c.budget_s
    c.finish(True)


# ---- 5: gradient checks ----------------------------------------------------------------------------

def test_criterion_5_gradients(criterion):
    c = criterion(5, "gradient checks vs central differences", 120)
    tl.test_pose_loss_gradient_matches_finite_differences()
    tb.test_gradient_encoder_probe()
    for mode in MODES:
        tb.test_gradient_heads_and_weights(mode)
    tb.test_gradient_class_loss_alone()
    tb.test_tape_pose_loss_matches_losses_module()
    assert c.elapsed < c.budget_s
    c.finish(True)


# ---- 6: warp study ----------------------------------------------------------------------------------

def test_criterion_6_warp_study(criterion):
    c = criterion(6, "wrong poses beat ground truth under the photometric loss", 600)
    scene = make_scene(21)
    traj = sample_camera_path(scene, TrajectoryConfig(n_frames=200, seed=21))
    frames = [render_frame(scene, p, K128) for p in traj.poses]
    rows = run_study([f[0].values for f in frames], [f[1].values for f in frames], traj.poses, K128,
                     k=5, n_pairs=100, seed=0)
    s = study_summary(rows)
    c.detail = (f"pairs {s['pairs']}, fraction {s['fraction_wrong_pose_lower']:.2f}, "
                f"min L_R {s['gt_l_r_min']:.4f}, min L_G {s['gt_l_g_min']:.5f}")
    assert s["pairs"] >= 100
    assert s["gt_l_r_min"] > 0 and s["gt_l_g_min"] > 0
    assert s["fraction_wrong_pose_lower"] > 0.3
    assert c.elapsed < c.budget_s
    c.finish(True)


# ---- 7: learning trends --------------------------------------------------------------------------------

TRAIN_BUDGET_S = 20 * 60
TREND_MODES = ("bimodal", "unimodal", "bimodal_nocorr")


@pytest.fixture(scope="session")
def trend_data(request):
    """Three 1000-frame calibrated-preset trajectories at 128x128: two for training, one held out."""
    root = request.config.cache.mkdir("colonpose_trend_data")
    done = root / "complete"
    if not done.exists():
        generate(root, seed=11, n_trajectories=3, traj_cfg=TrajectoryConfig.calibrated(n_frames=1000))
        done.write_text(DatasetManifest.read(root).checksum())
    m = DatasetManifest.read(root)
    assert done.read_text() == m.checksum()
    tr = [load_trajectory(m.traj_dir(i), with_depth=False) for i in (0, 1)]
    held = load_trajectory(m.traj_dir(2), with_depth=False)
    return tr, held


def run_mode(trend_data, mode: str, seed: int) -> dict:
    tr, held = trend_data
    cfg = BimodalConfig.for_k(5, mode=mode)
    pairs = make_pairs(tr, 5, reverse=True)
    val = make_pairs([held], 5)
    t0 = time.process_time()
    res = train(pairs, cfg, TrainConfig(seed=seed), val_pairs=val)
    cpu = time.process_time() - t0
    gt = list(held.poses.poses)
    fwd, _, _ = predict_trajectory(res.params, res.arch, cfg, held.images, gt)
    rep = evaluate_direction(gt, fwd, 5, name=mode)
    return {
        "cpu_s": cpu,
        "acc": direction_accuracy_on(res.params, val, res.arch, cfg) if cfg.bimodal else float("nan"),
        "rte": rep.rte,
        "manhattan": manhattan_histogram_loss(histogram(step_tz(gt, 5)), histogram(step_tz(fwd, 5))),
        "curve": np.array([r[2] for r in res.curve]),
    }


TREND_RESULTS: dict = {}


def test_criterion_7_learning_trends(criterion, trend_data):
    c = criterion(7, "learning trends on held-out trajectory", 3 * len(TREND_MODES) * TRAIN_BUDGET_S)
    checks = {"a acc>=0.95": [], "b rte bi<uni": [], "c rte nocorr>bi": [], "d manhattan bi<=uni": []}
    lines = []
    for seed in range(3):
        r = {m: run_mode(trend_data, m, seed) for m in TREND_MODES}
        TREND_RESULTS[seed] = r
        for m in TREND_MODES:
            assert r[m]["cpu_s"] < TRAIN_BUDGET_S, (m, seed, r[m]["cpu_s"])
        checks["a acc>=0.95"].append(r["bimodal"]["acc"] >= 0.95)
        checks["b rte bi<uni"].append(r["bimodal"]["rte"] < r["unimodal"]["rte"])
        checks["c rte nocorr>bi"].append(r["bimodal_nocorr"]["rte"] > r["bimodal"]["rte"])
        checks["d manhattan bi<=uni"].append(r["bimodal"]["manhattan"] <= r["unimodal"]["manhattan"])
        lines.append(f"seed {seed}: acc {r['bimodal']['acc']:.3f} rte bi/uni/nocorr "
                     f"{r['bimodal']['rte']:.3f}/{r['unimodal']['rte']:.3f}/{r['bimodal_nocorr']['rte']:.3f} "
                     f"manhattan bi/uni {r['bimodal']['manhattan']:.0f}/{r['unimodal']['manhattan']:.0f}")
        print(lines[-1])
        # a third seed cannot change the outcome once every comparison holds on two
        if seed == 1 and all(sum(v) == 2 for v in checks.values()):
            break
    passed = {k: sum(v) >= 2 for k, v in checks.items()}
    c.detail = "; ".join(f"{k}: {sum(v)}/{len(v)}" for k, v in checks.items())
    c.detail += "".join(f"\n    {line}" for line in lines)
    assert all(passed.values()), (c.detail, lines)
    c.finish(True)


def test_training_loss_decreases_over_500_step_windows():
    """Default config: smoothed training loss at the end of every 500-step
    window is below its start.  The ablation modes are not covered; unimodal
    training plateaus once it has fitted the mean motion."""
    if not TREND_RESULTS:
        pytest.skip("needs the criterion 7 training runs")
    for seed, r in TREND_RESULTS.items():
        curve = r["bimodal"]["curve"]
        for s in range(0, len(curve) - 500 + 1, 100):
            head, tail = curve[s:s + 50].mean(), curve[s + 450:s + 500].mean()
            assert tail < head, (seed, s, head, tail)


# ---- 8: determinism ---------------------------------------------------------------------------------------

def _pipeline(root):
    d, run, pred, ev = (os.path.join(root, x) for x in ("data", "run", "pred", "eval"))
    assert main(["generate", "--seed", "5", "--out", d, "frames=40", "trajectories=2", "resolution=32"]) == 0
    assert main(["train", "--seed", "5", "--out", run, f"data={d}", "steps=20", "batch_size=8",
                 "train_trajectories=0", "val_trajectory=1", "val_every=10"]) == 0
    assert main(["predict", "--out", pred, f"checkpoint={os.path.join(run, 'checkpoint.bin')}", f"data={d}",
                 "trajectory=1"]) == 0
    assert main(["eval", "--out", ev, f"gt={os.path.join(d, 'traj_01', 'poses.txt')}",
                 f"pred={os.path.join(pred, 'pred_forward.txt')}",
                 f"pred_backward={os.path.join(pred, 'pred_backward.txt')}"]) == 0
    out = {}
    for sub in ("data", "run", "pred", "eval"):
        for name in sorted(os.listdir(os.path.join(root, sub))):
            if name.endswith((".csv", ".png")):
                with open(os.path.join(root, sub, name), "rb") as fh:
                    out[f"{sub}/{name}"] = fh.read()
    return out


def test_criterion_8_determinism(criterion, tmp_path):
    c = criterion(8, "generate/train/eval reruns are byte-identical", 300)
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    csvs = [k for k in a if k.endswith(".csv")]
    assert {"data/summary.csv", "run/training_curve.csv", "pred/pairs.csv", "eval/metrics.csv",
            "eval/histogram.csv"} <= set(csvs)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k] == b[k], k
    c.detail = f"{len(csvs)} CSV and {len(a) - len(csvs)} PNG files compared"
    assert c.elapsed < c.budget_s
    c.finish(True)
