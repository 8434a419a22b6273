"""colonpose command line.

    colonpose <generate|train|predict|eval|warp-study> [--config FILE] [--seed N]
              [--out DIR] [-v] [key=value | --key value ...]

Settings come from a plain key=value file and are overridden by trailing
``key=value`` or ``--key value`` arguments.  Unknown keys are rejected.
Every run writes ``run_manifest.txt`` under --out; it re-parses as a config.

Exit codes: 0 ok, 2 configuration error, 3 I/O or parse error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, fileio

log = logging.getLogger("colonpose")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# key -> (type, default); a default of None means "leave the library default"
OPTIONS = {
    "generate": {
        "frames": (int, 1000), "trajectories": (int, 1), "resolution": (int, 128),
        "preset": (str, "default"), "k": (int, 5), "figures": (bool, True),
        "waypoints": (int, 18), "max_wp_translation": (float, None), "max_wp_rotation": (float, None),
        "roll_rate": (float, None), "step_size_mean": (float, None), "speed_jitter": (float, None),
        "include_reinsertion": (bool, None), "base_radius": (float, 2.5), "fold_amplitude": (float, 0.9),
        "fold_frequency": (float, 0.4), "fold_power": (float, 4.0), "light_offset": (float, 0.6),
        "light_intensity": (float, 2.2),
    },
    "train": {
        "data": (str, ""), "train_trajectories": (str, "0"), "val_trajectory": (int, -1),
        "mode": (str, "bimodal"), "k": (int, 5), "steps": (int, 1500), "batch_size": (int, 16),
        "lr": (float, 5e-4), "momentum": (float, 0.9), "w_c": (float, 0.1), "warmup": (int, 100),
        "clip": (float, 1000.0), "lr_floor": (float, 0.05), "learn_loss_weights": (bool, True),
        "val_every": (int, 250), "reverse_pairs": (bool, True),
        "frames_limit": (int, 0), "figures": (bool, True),
    },
    "predict": {
        "checkpoint": (str, ""), "data": (str, ""), "trajectory": (int, 0), "k": (int, 0),
        "batch": (int, 64),
    },
    "eval": {
        "gt": (str, ""), "pred": (str, ""), "pred_backward": (str, ""), "k": (int, 5),
        "rescale": (bool, False), "name": (str, "traj"), "histogram": (bool, True),
        "figures": (bool, True),
    },
    "warp-study": {
        "data": (str, ""), "trajectory": (int, 0), "pairs": (int, 100), "k": (int, 5),
        "equalize_mean": (bool, False), "trans_grid": (str, "0.05,0.1,0.2"),
        "rot_grid": (str, "0.5,1,2"), "dumps": (int, 5), "figures": (bool, True),
    },
}
# keys a run manifest carries besides the command options
MANIFEST_KEYS = {"command", "seed", "out", "version", "config"}


def _convert(key, typ, text):
    text = str(text).strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r} (expected {typ.__name__})") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return "" if v is None else (repr(v) if isinstance(v, float) else str(v))


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    out: str = "."
    config: str = ""
    verbosity: int = 0
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def build(cls, command, config_file=None, overrides=(), seed=None, out=None, verbosity=0):
        if command not in OPTIONS:
            raise ConfigError(f"unknown command {command!r}")
        spec = OPTIONS[command]
        values = {k: d for k, (_, d) in spec.items()}
        raw = {}
        file_seed = file_out = None
        if config_file:
            try:
                raw.update(fileio.read_keyvalue(config_file))
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {config_file}") from None
            if "command" in raw and raw.pop("command") != command:
                raise ConfigError(f"{config_file} was written for a different command")
            file_seed, file_out = raw.pop("seed", None), raw.pop("out", None)
            for k in ("version", "config"):
                raw.pop(k, None)
        for key, val in overrides:
            raw[key] = val
        for key, val in raw.items():
            k = key.replace("-", "_")
            if k not in spec:
                raise ConfigError(f"unknown key {key!r} for {command}")
            values[k] = None if val == "" and spec[k][1] is None else _convert(k, spec[k][0], val)
        s = seed if seed is not None else (_convert("seed", int, file_seed) if file_seed is not None else 0)
        o = out if out is not None else (file_out or ".")
        return cls(command, int(s), o, config_file or "", verbosity, values)

    def manifest_items(self) -> dict:
        d = {"command": self.command, "seed": str(self.seed), "out": self.out, "version": __version__}
        d.update({k: _fmt(v) for k, v in self.values.items()})
        return d

    def write_manifest(self) -> str:
        os.makedirs(self.out, exist_ok=True)
        path = os.path.join(self.out, "run_manifest.txt")
        fileio.write_keyvalue(path, self.manifest_items())
        return path


def _split_overrides(extra):
    """``key=value`` and ``--key value`` / ``--key=value`` tokens -> list of pairs."""
    out, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if tok.startswith("--"):
            body = tok[2:]
            if "=" in body:
                k, v = body.split("=", 1)
            elif i + 1 < len(extra) and not extra[i + 1].startswith("--"):
                k, v = body, extra[i + 1]
                i += 1
            else:
                k, v = body, "true"
            out.append((k, v))
        elif "=" in tok:
            out.append(tuple(tok.split("=", 1)))
        else:
            raise ConfigError(f"cannot parse argument {tok!r} (expected key=value)")
        i += 1
    return out


def _require(cfg: RunConfig, *keys):
    for k in keys:
        if not cfg[k]:
            raise ConfigError(f"{cfg.command} needs {k}=...")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---- generate -------------------------------------------------------------------

def cmd_generate(cfg: RunConfig):
    from .evaluation import histogram
    from .simgen.dataset import generate, summarize
    from .simgen.path import TrajectoryConfig
    from .simgen.render import LightRig

    v = cfg.values
    if v["preset"] not in ("default", "calibrated"):
        raise ConfigError("preset must be default or calibrated")
    tc = TrajectoryConfig.calibrated() if v["preset"] == "calibrated" else TrajectoryConfig()
    over = {k: v[k] for k in ("max_wp_translation", "max_wp_rotation", "roll_rate", "step_size_mean",
                              "speed_jitter", "include_reinsertion") if v[k] is not None}
    try:
        tc = tc.updated(n_frames=v["frames"], n_waypoints=v["waypoints"], **over)
        scene_kw = {k: v[k] for k in ("base_radius", "fold_amplitude", "fold_frequency", "fold_power")}
        lights = LightRig(offset=v["light_offset"], intensity=v["light_intensity"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if v["frames"] <= v["k"]:
        raise ConfigError("frames must exceed k")

    def progress(i, j, n):
        if j % 100 == 0:
            log.info("trajectory %d: frame %d/%d", i, j, n)

    manifest = generate(cfg.out, cfg.seed, v["trajectories"], tc, v["resolution"], scene_kw, lights, progress)
    rows = []
    for i, name in enumerate(manifest.trajectories):
        poses = fileio.read_poses(os.path.join(manifest.traj_dir(i), "poses.txt"))
        s = summarize(poses, v["k"])
        rows.append([name, s["frames"], f"{s['mean_step_cm']:.6f}", f"{s['mean_rotation_deg']:.6f}",
                     f"{s['frac_neg']:.6f}", f"{s['frac_pos']:.6f}", f"{s['mode_neg']:.4f}",
                     f"{s['mode_pos']:.4f}", int(s["bimodal"])])
        print(f"{name}: {s['frames']} frames, mean step {s['mean_step_cm']:.3f} cm, "
              f"mean rotation {s['mean_rotation_deg']:.2f} deg, t_z modes {s['mode_neg']:+.2f}/"
              f"{s['mode_pos']:+.2f} cm ({s['frac_neg']:.0%}/{s['frac_pos']:.0%}), "
              f"bimodal={'yes' if s['bimodal'] else 'no'}")
        if v["figures"]:
            from . import report
            from .evaluation import step_tz

            h = histogram(step_tz(poses, v["k"]))
            report.tz_histogram(h.bin_edges, h.counts, path=os.path.join(cfg.out, f"tz_hist_{name}.png"),
                                title=f"{name}, k={v['k']}")
    _write_csv(os.path.join(cfg.out, "summary.csv"),
               ["trajectory", "frames", "mean_step_cm", "mean_rotation_deg", "frac_neg", "frac_pos",
                "mode_neg_cm", "mode_pos_cm", "bimodal"], rows)
    print(f"dataset checksum {manifest.checksum()}")
    return manifest


# ---- train ----------------------------------------------------------------------

def _load_trajectories(data, indices, limit):
    from .simgen.dataset import DatasetManifest, load_trajectory

    m = DatasetManifest.read(data)
    out = []
    for i in indices:
        if not 0 <= i < len(m.trajectories):
            raise ConfigError(f"trajectory index {i} not in dataset (has {len(m.trajectories)})")
        out.append(load_trajectory(m.traj_dir(i), with_depth=False, limit=limit or None))
    return m, out


def cmd_train(cfg: RunConfig):
    from .bimodal_net import checkpoint
    from .bimodal_net.model import Architecture, BimodalConfig
    from .bimodal_net.train import TrainConfig, make_pairs, train, write_curve

    v = cfg.values
    _require(cfg, "data")
    try:
        idx = [int(s) for s in v["train_trajectories"].split(",") if s.strip()]
        bcfg = BimodalConfig.for_k(v["k"], v["mode"])
        hyper = TrainConfig(steps=v["steps"], batch_size=v["batch_size"], lr=v["lr"], momentum=v["momentum"],
                            warmup=v["warmup"], clip=v["clip"], lr_floor=v["lr_floor"],
                            learn_loss_weights=v["learn_loss_weights"], w_c=v["w_c"], seed=cfg.seed,
                            val_every=v["val_every"], reverse_pairs=v["reverse_pairs"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    m, trajs = _load_trajectories(v["data"], idx, v["frames_limit"])
    pairs = make_pairs(trajs, v["k"], reverse=v["reverse_pairs"])
    val = None
    if v["val_trajectory"] >= 0:
        _, vt = _load_trajectories(v["data"], [v["val_trajectory"]], v["frames_limit"])
        val = make_pairs(vt, v["k"], reverse=True)
    arch = Architecture(resolution=m.intrinsics.width)
    log.info("training %s on %d pairs for %d steps", bcfg.mode, len(pairs), hyper.steps)
    res = train(pairs, bcfg, hyper, arch, val_pairs=val)
    os.makedirs(cfg.out, exist_ok=True)
    ck = os.path.join(cfg.out, "checkpoint.bin")
    checkpoint.save(ck, res.params, res.weights, arch, bcfg, hyper)
    write_curve(os.path.join(cfg.out, "training_curve.csv"), res.curve)
    if v["figures"]:
        from . import report

        report.training_curve(res.curve, os.path.join(cfg.out, "training_curve.png"))
    last = res.curve[-1]
    accs = [r[7] for r in res.curve if np.isfinite(r[7])]
    print(f"trained {bcfg.mode}: final loss {last[2]:.4f}, beta {res.weights.beta:.3f}, "
          f"gamma {res.weights.gamma:.3f}" + (f", val direction accuracy {accs[-1]:.3f}" if accs else ""))
    return ck


# ---- predict --------------------------------------------------------------------

def cmd_predict(cfg: RunConfig):
    from .bimodal_net import checkpoint
    from .bimodal_net.infer import predict_trajectory
    from .simgen.dataset import DatasetManifest, load_trajectory

    v = cfg.values
    _require(cfg, "checkpoint", "data")
    params, weights, arch, bcfg = checkpoint.load(v["checkpoint"])
    if v["k"] and v["k"] != bcfg.k:
        raise ConfigError(f"checkpoint was trained with k={bcfg.k}, not k={v['k']}")
    m = DatasetManifest.read(v["data"])
    if m.intrinsics.width != arch.resolution or m.intrinsics.height != arch.resolution:
        raise ConfigError(f"dataset resolution {m.intrinsics.width}x{m.intrinsics.height} does not match "
                          f"the checkpoint ({arch.resolution})")
    if not 0 <= v["trajectory"] < len(m.trajectories):
        raise ConfigError(f"trajectory {v['trajectory']} not in dataset")
    tr = load_trajectory(m.traj_dir(v["trajectory"]), with_depth=False)
    gt = list(tr.poses.poses)
    fwd, bwd, (fp, fv, fpr, bp, bv, bpr) = predict_trajectory(params, arch, bcfg, tr.images, gt, v["batch"])
    os.makedirs(cfg.out, exist_ok=True)
    fileio.write_poses(os.path.join(cfg.out, "pred_forward.txt"), fwd)
    fileio.write_poses(os.path.join(cfg.out, "pred_backward.txt"), bwd)
    rows = []
    for direction, pairs, vecs, probs in (("forward", fp, fv, fpr), ("backward", bp, bv, bpr)):
        for n, (i, j) in enumerate(pairs):
            p = probs[n] if probs is not None else (np.nan, np.nan)
            rows.append([direction, int(i), int(j)] + [f"{x:.9g}" for x in (*p, *vecs[n])])
    _write_csv(os.path.join(cfg.out, "pairs.csv"),
               ["direction", "first", "second", "p_neg", "p_pos", "tx", "ty", "tz", "lq_x", "lq_y", "lq_z"], rows)
    print(f"wrote {len(fwd)} forward and {len(bwd)} backward poses to {cfg.out}")
    return fwd, bwd


# ---- eval -----------------------------------------------------------------------

def cmd_eval(cfg: RunConfig):
    from .evaluation import evaluate_run, histogram, step_tz, write_histograms, write_reports

    v = cfg.values
    _require(cfg, "gt", "pred")
    if v["k"] < 1:
        raise ConfigError("k must be >= 1")
    reports = evaluate_run(v["gt"], v["pred"], v["k"], v["rescale"], v["pred_backward"] or None, v["name"])
    os.makedirs(cfg.out, exist_ok=True)
    write_reports(os.path.join(cfg.out, "metrics.csv"), reports)
    gt = fileio.read_poses(v["gt"])
    pred = fileio.read_poses(v["pred"])
    hg, hp = histogram(step_tz(gt, v["k"])), histogram(step_tz(pred, v["k"]))
    if v["histogram"]:
        write_histograms(os.path.join(cfg.out, "histogram.csv"), hg, hp)
    if v["figures"]:
        from . import report

        report.tz_histogram(hg.bin_edges, hg.counts, hp.counts, os.path.join(cfg.out, "tz_hist.png"),
                            title=f"{v['name']}, k={v['k']}")
        report.trajectories(np.array([p.translation for p in gt]), np.array([p.translation for p in pred]),
                            os.path.join(cfg.out, "trajectory.png"), title=v["name"])
    for r in reports:
        print(f"{r.trajectory} {r.direction}: ATE {r.ate:.3f} cm, RTE {10 * r.rte:.2f} mm, "
              f"ROT {r.rot:.2f} deg, Acc {100 * r.direction_accuracy:.1f}%, scale {r.scale:.3f}, "
              f"Manhattan {r.manhattan:.0f}")
    return reports


# ---- warp-study -----------------------------------------------------------------

def cmd_warp_study(cfg: RunConfig):
    from .simgen.dataset import DatasetManifest, load_trajectory
    from .warpstudy import perturbation_grid, run_study, summarize, write_rows

    v = cfg.values
    _require(cfg, "data")
    try:
        tg = tuple(float(s) for s in v["trans_grid"].split(",") if s.strip())
        rg = tuple(float(s) for s in v["rot_grid"].split(",") if s.strip())
    except ValueError:
        raise ConfigError("trans_grid and rot_grid are comma-separated numbers") from None
    m = DatasetManifest.read(v["data"])
    if not 0 <= v["trajectory"] < len(m.trajectories):
        raise ConfigError(f"trajectory {v['trajectory']} not in dataset")
    tr = load_trajectory(m.traj_dir(v["trajectory"]), with_depth=True)
    if tr.depths is None:
        raise ConfigError("dataset has no depth maps")
    rows = run_study(tr.images, tr.depths, list(tr.poses.poses), tr.intrinsics, v["k"], v["pairs"], cfg.seed,
                     perturbation_grid(tg, rg), v["equalize_mean"], os.path.join(cfg.out, "dumps"), v["dumps"])
    os.makedirs(cfg.out, exist_ok=True)
    write_rows(os.path.join(cfg.out, "warp_study.csv"), rows)
    s = summarize(rows)
    fileio.write_keyvalue(os.path.join(cfg.out, "warp_study_summary.txt"),
                          {k: (f"{x:.9g}" if isinstance(x, float) else str(x)) for k, x in s.items()})
    if v["figures"]:
        from . import report

        report.warp_study([r.l_r for r in rows], [r.best_l_r for r in rows],
                          os.path.join(cfg.out, "warp_study.png"))
    print(f"{s['pairs']} pairs: a perturbed pose beats ground truth on L_R for "
          f"{100 * s['fraction_wrong_pose_lower']:.0f}% of them; mean GT L_R {s['gt_l_r_mean']:.4f}, "
          f"mean GT L_G {s['gt_l_g_mean']:.4f}")
    return rows


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "predict": cmd_predict,
            "eval": cmd_eval, "warp-study": cmd_warp_study}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="colonpose", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out", help="output directory (default .)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .bimodal_net.train import NonFiniteLoss

    try:
        cfg = RunConfig.build(args.command, args.config, _split_overrides(extra), args.seed, args.out,
                              args.verbose)
        cfg.write_manifest()
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"colonpose: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLoss, FloatingPointError) as exc:
        print(f"colonpose: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, fileio.ParseError) as exc:
        print(f"colonpose: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # invalid settings that only the library can detect (e.g. a tube too short for the margins)
        print(f"colonpose: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
