"""``waternerf`` command line.

Every JSON output embeds the options that produced it, and all randomness
comes from ``--seed``. Errors print one line and exit nonzero (2 for usage
errors, 1 for everything else).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("waternerf")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class CliError(Exception):
    pass


def _triple(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected r,g,b floats, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return vals


def _size(text: str) -> tuple:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 8 or h < 8:
        raise argparse.ArgumentTypeError("image size must be at least 8x8")
    return w, h


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _options(args) -> dict:
    """Parsed options as plain JSON values, for self-describing reports."""
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "log_level", "threads"):
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def _require_file(path, what) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def _require_dir(path, what) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise CliError(f"{what} not found: {path}")
    return path


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    path = _require_file(path, "config file")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return cfg


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> None:
    from .dataset import save_dataset
    from .synth import SceneConfig, generate

    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise CliError(f"output directory is not empty: {out}")
    w, h = args.size
    cfg = SceneConfig(width=w, height=h, n_views=args.views, n_test=args.test_views,
                      beta=tuple(args.beta), veiling=tuple(args.veil), n_tracks=args.tracks, seed=args.seed)
    ds = generate(cfg)
    save_dataset(ds, out)
    log.info("wrote %d views (%d held out) to %s", len(ds), len(ds.indices("test")), out)


# ---------------------------------------------------------------- histeq

_IMAGE_SUFFIXES = (".png", ".pfm")


def _list_images(folder: Path) -> list:
    stems = sorted({p.stem for p in folder.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES})
    return [folder / f"{s}.pfm" if (folder / f"{s}.pfm").exists() else folder / f"{s}.png" for s in stems]


def _write_image(path: Path, image) -> None:
    from .dataset import write_pfm, write_png

    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, image)
    else:
        write_png(path.with_suffix(".png"), image)


def cmd_histeq(args) -> None:
    from .dataset import read_image, write_pfm, write_png
    from .restore import histogram_equalize

    src = Path(args.input)
    if src.is_file():
        img = read_image(src)
        _write_image(Path(args.out), histogram_equalize(img))
        return
    src = _require_dir(src, "input")
    if (src / "poses.json").exists():
        src = src / "images"
    files = _list_images(src)
    if not files:
        raise CliError(f"no PNG or PFM images in {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in files:
        eq = histogram_equalize(read_image(f))
        write_png(out / f"{f.stem}.png", eq)
        write_pfm(out / f"{f.stem}.pfm", eq)
    _write_json(out / "histeq.json", {"config": _options(args), "images": [f.stem for f in files]})


# ---------------------------------------------------------------- train

_MODES = {"underwater": "underwater_mse", "histeq": "histeq_mse", "joint": "joint"}
_TRAIN_FLAGS = {
    "iters": "iterations", "batch_rays": "batch_rays", "n_coarse": "n_coarse", "n_fine": "n_fine",
    "lr_initial": "lr_initial", "lr_final": "lr_final", "coarse_weight": "coarse_weight",
    "refit_every": "refit_every", "refit_pixels": "refit_pixels", "reg_lambda": "reg_lambda",
    "eval_every": "eval_every", "dtype": "dtype", "density_noise": "density_noise",
}
_ARCH_FLAGS = ("width", "depth", "pos_freqs", "dir_freqs", "activation")


def _train_config(args):
    from .field import MlpArch, TrainConfig

    cfg = _load_config_file(args.config)
    arch = dict(cfg.pop("arch", {}))
    for flag, key in _TRAIN_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            cfg[key] = v
    for key in _ARCH_FLAGS:
        v = getattr(args, key)
        if v is not None:
            arch[key] = v
    if "width" in arch and "color_width" not in arch:
        arch["color_width"] = max(1, arch["width"] // 2)
    cfg["seed"] = args.seed
    cfg["loss_mode"] = _MODES[args.mode]
    try:
        cfg["arch"] = MlpArch(**arch)
        return TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid training configuration: {exc}") from exc


def cmd_train(args) -> None:
    from .dataset import load_dataset
    from .field import TrainingDiverged, save_checkpoint, train

    cfg = _train_config(args)
    ds = load_dataset(_require_dir(args.data, "dataset"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    def progress(step, loss, elapsed):
        log.info("train step=%d loss=%.6f elapsed=%.1fs", step, loss, elapsed)

    diag = out.with_name(out.stem + ".diverged.json")
    try:
        result = train(ds, cfg, diagnostic_path=diag, progress=progress)
    except TrainingDiverged as exc:
        raise CliError(f"{exc}; diagnostic checkpoint written to {diag}") from exc
    save_checkpoint(out, result, cfg, ds)
    log.info("wrote checkpoint %s", out)


# ---------------------------------------------------------------- render

def _read_pose_file(path):
    import numpy as np

    path = _require_file(path, "pose file")
    try:
        d = json.loads(path.read_text())
        m = d["camera_to_world"] if isinstance(d, dict) else d
        return np.asarray(m, dtype=np.float64).reshape(4, 4)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: expected a camera_to_world matrix (16 floats) ({exc})") from exc


def _pose_indices(text: str, n: int) -> list:
    if text == "all":
        return list(range(n))
    try:
        idx = [int(s) for s in text.split(",")]
    except ValueError:
        raise CliError(f"--pose-index expects integers or 'all', got {text!r}") from None
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise CliError(f"pose index {bad[0]} out of range (checkpoint has {n} poses)")
    return idx


def cmd_render(args) -> None:
    import numpy as np

    from .dataset import write_pfm, write_png
    from .field import load_checkpoint, render_view
    from .geometry import backproject, validate_pose, write_ply
    from .restore import correct_rendered_view, load_params

    ckpt = load_checkpoint(_require_file(args.ckpt, "checkpoint"))
    water = ckpt.water
    if args.params is not None:
        water = load_params(_require_file(args.params, "parameter file"))
    if args.corrected and water is None:
        raise CliError("--corrected needs water parameters: train with --mode joint or pass --params from 'correct'")

    if args.pose is not None:
        pose = _read_pose_file(args.pose)
        try:
            validate_pose(pose)
        except ValueError as exc:
            raise CliError(f"{args.pose}: {exc}") from exc
        jobs = [(Path(args.pose).stem, pose)]
    else:
        jobs = [(ckpt.names[i], ckpt.poses[i]) for i in _pose_indices(args.pose_index, len(ckpt.poses))]

    n_coarse = args.n_coarse or ckpt.config.n_coarse
    n_fine = args.n_fine or ckpt.config.n_fine
    out = Path(args.out)
    for name, pose in jobs:
        color, rng, opacity = render_view(ckpt.model, ckpt.intrinsics, pose, ckpt.near, ckpt.far, n_coarse, n_fine)
        color = np.clip(color, 0.0, 1.0)
        (out / "rgb").mkdir(parents=True, exist_ok=True)
        write_png(out / "rgb" / f"{name}.png", color)
        write_pfm(out / "rgb" / f"{name}.pfm", color)
        cloud_colors = color
        if args.corrected:
            corrected = correct_rendered_view(color, rng, water, ckpt.config.t_floor)
            (out / "corrected").mkdir(parents=True, exist_ok=True)
            write_png(out / "corrected" / f"{name}.png", corrected)
            write_pfm(out / "corrected" / f"{name}.pfm", corrected)
            cloud_colors = corrected
        if args.depth:
            (out / "depth").mkdir(parents=True, exist_ok=True)
            (out / "cloud").mkdir(parents=True, exist_ok=True)
            write_pfm(out / "depth" / f"{name}.pfm", rng)
            write_pfm(out / "depth" / f"{name}_opacity.pfm", opacity)
            bp = backproject(ckpt.intrinsics, pose, rng, colors=cloud_colors)
            write_ply(out / "cloud" / f"{name}.ply", bp.points, bp.colors)
        log.info("rendered %s", name)
    _write_json(out / "render.json", {
        "config": _options(args),
        "views": [name for name, _ in jobs],
        "water_params": water.to_dict() if water is not None else None,
    })


# ---------------------------------------------------------------- correct

def cmd_correct(args) -> None:
    import numpy as np

    from .dataset import load_dataset
    from .field import fit_water, load_checkpoint
    from .restore import save_params

    ckpt = load_checkpoint(_require_file(args.ckpt, "checkpoint"))
    ds = load_dataset(_require_dir(args.data, "dataset"))
    train_idx = ds.indices("train")
    if not train_idx:
        raise CliError("dataset has no training views")
    cfg = ckpt.config
    overrides = {"refit_pixels": args.pixels, "reg_lambda": args.reg_lambda, "final_refit_max_evals": args.max_evals}
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    fit = fit_water(ckpt.model, ds, train_idx, cfg, np.random.default_rng(args.seed), init=None)
    save_params(args.out, fit, {"options": _options(args), "train_config": cfg.to_dict()})
    log.info("fitted beta=%s veiling=%s loss=%.6g", fit.params.beta.tolist(), fit.params.veiling.tolist(), fit.loss)


# ---------------------------------------------------------------- eval

def _image_lookup(ds, folder):
    """Map dataset frame index to image for every frame with a file in ``folder``."""
    from .dataset import read_image

    folder = _require_dir(folder, "image directory")
    out = {}
    for i, name in enumerate(ds.names):
        for suffix in (".pfm", ".png"):
            p = folder / f"{name}{suffix}"
            if p.exists():
                out[i] = read_image(p)
                break
    if not out:
        raise CliError(f"no images in {folder} match the dataset frame names")
    return out


def cmd_eval(args) -> None:
    import numpy as np

    from . import metrics
    from .dataset import DatasetError, load_colorboard, load_dataset, load_tracks, read_image, read_pfm

    report = {"metric": args.metric, "config": _options(args)}
    if args.metric == "uiqm":
        folder = _require_dir(args.images, "image directory")
        files = _list_images(folder)
        if not files:
            raise CliError(f"no PNG or PFM images in {folder}")
        per = {f.stem: metrics.uiqm(np.clip(read_image(f), 0, 1)) for f in files}
        report["per_image"] = per
        report["mean"] = {k: float(np.mean([v[k] for v in per.values()])) for k in ("uiqm", "uicm", "uism", "uiconm")}
        _write_json(args.out, report)
        return

    ds = load_dataset(_require_dir(args.data, "dataset"))
    images = _image_lookup(ds, args.images or Path(args.data) / "images")
    if args.metric == "color":
        board = load_colorboard(args.board) if args.board else ds.colorboard
        if board is None:
            raise CliError("no colorboard: pass --board or add colorboard.json to the dataset")
        ids = _pose_indices(args.ids, len(ds)) if args.ids else None
        report["results"] = metrics.colorboard_errors(images, board, ids)
    elif args.metric == "scm":
        tracks = load_tracks(args.tracks) if args.tracks else ds.tracks
        if tracks is None:
            raise CliError("no tracks: pass --tracks or add tracks.json to the dataset")
        report["results"] = metrics.scene_consistency(images, tracks)
    elif args.metric == "psnr":
        truth = _image_lookup(ds, args.truth) if args.truth else dict(enumerate(ds.images))
        common = sorted(set(images) & set(truth))
        if not common:
            raise CliError("no images in common between prediction and truth")
        per = {ds.names[i]: metrics.psnr(np.clip(images[i], 0, 1), truth[i]) for i in common}
        report["results"] = {"per_image": per, "mean": float(np.mean(list(per.values())))}
    elif args.metric == "depth":
        from .geometry import backproject, cloud_distance

        if ds.depths is None:
            raise CliError("dataset has no ground-truth depth maps")
        folder = _require_dir(args.depth, "depth directory")
        span = float(np.nanmax(ds.depths) - np.nanmin(ds.depths))
        per = {}
        for i, name in enumerate(ds.names):
            p = folder / f"{name}.pfm"
            if not p.exists():
                continue
            try:
                pred = read_pfm(p)
            except DatasetError as exc:
                raise CliError(str(exc)) from exc
            pose = ds.poses[i]
            d = cloud_distance(backproject(ds.intrinsics, pose, pred).points,
                               backproject(ds.intrinsics, pose, ds.depths[i]).points)
            per[name] = {**d, "rmse_fraction_of_range": d["rmse_pred_to_truth"] / span}
        if not per:
            raise CliError(f"no depth maps in {folder} match the dataset frame names")
        report["results"] = {"per_image": per, "depth_range": span}
    _write_json(args.out, report)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="waternerf", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                   help="verbosity of progress lines on standard error")
    p.add_argument("--threads", type=_positive_int, default=None, help="cap on numerical worker threads")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", help="generate a synthetic underwater scene")
    s.add_argument("--out", required=True, type=Path, help="output dataset directory (new or empty)")
    s.add_argument("--views", type=_positive_int, default=8, help="number of training views")
    s.add_argument("--test-views", type=int, default=2, help="number of held-out views")
    s.add_argument("--size", type=_size, default=(64, 64), help="image size WxH")
    s.add_argument("--beta", type=_triple, default=[0.4, 0.2, 0.1], help="attenuation r,g,b in 1/m")
    s.add_argument("--veil", type=_triple, default=[0.1, 0.15, 0.3], help="veiling light r,g,b")
    s.add_argument("--tracks", type=int, default=200, help="number of ground-truth pixel tracks")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("histeq", help="per-channel histogram equalization")
    s.add_argument("--in", dest="input", required=True, type=Path, help="image, image folder or dataset directory")
    s.add_argument("--out", required=True, type=Path, help="output image (file input) or folder")
    s.set_defaults(func=cmd_histeq)

    s = sub.add_parser("train", help="train the radiance field")
    s.add_argument("--data", required=True, type=Path, help="dataset directory")
    s.add_argument("--out", required=True, type=Path, help="checkpoint JSON to write")
    s.add_argument("--mode", required=True, choices=sorted(_MODES), help="training targets and water refits")
    s.add_argument("--iters", type=_positive_int, help="training iterations")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", type=Path, help="JSON file of training options; flags take precedence")
    s.add_argument("--batch-rays", type=_positive_int)
    s.add_argument("--n-coarse", type=_positive_int, help="coarse samples per ray")
    s.add_argument("--n-fine", type=_positive_int, help="fine samples per ray")
    s.add_argument("--lr-initial", type=float)
    s.add_argument("--lr-final", type=float)
    s.add_argument("--coarse-weight", type=float, help="weight of the coarse color loss")
    s.add_argument("--refit-every", type=_positive_int, help="iterations between water refits (joint mode)")
    s.add_argument("--refit-pixels", type=_positive_int, help="pixels per water refit")
    s.add_argument("--reg-lambda", type=float, help="inverse entropic regularization of the Sinkhorn loss")
    s.add_argument("--eval-every", type=int, help="held-out PSNR evaluation period (0 disables)")
    s.add_argument("--density-noise", type=float, help="std of training noise on the raw density")
    s.add_argument("--dtype", choices=["float32", "float64"])
    s.add_argument("--width", type=_positive_int)
    s.add_argument("--depth", type=_positive_int, help="trunk layers")
    s.add_argument("--pos-freqs", type=int)
    s.add_argument("--dir-freqs", type=int)
    s.add_argument("--activation", choices=["relu", "softplus"])
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render views from a checkpoint")
    s.add_argument("--ckpt", required=True, type=Path)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--pose-index", help="frame index, comma list, or 'all'")
    g.add_argument("--pose", type=Path, help="JSON file with a camera_to_world matrix")
    s.add_argument("--out", required=True, type=Path, help="output directory")
    s.add_argument("--corrected", action="store_true", help="also write water-corrected images")
    s.add_argument("--depth", action="store_true", help="also write range maps and colored PLY clouds")
    s.add_argument("--params", type=Path, help="water parameters JSON overriding the checkpoint")
    s.add_argument("--n-coarse", type=_positive_int)
    s.add_argument("--n-fine", type=_positive_int)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("correct", help="fit water parameters for a trained checkpoint")
    s.add_argument("--ckpt", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path, help="parameter JSON to write")
    s.add_argument("--pixels", type=_positive_int, help="rendered pixels used in the fit")
    s.add_argument("--reg-lambda", type=float)
    s.add_argument("--max-evals", type=_positive_int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_correct)

    s = sub.add_parser("eval", help="compute a metric report")
    s.add_argument("metric", choices=["color", "uiqm", "scm", "depth", "psnr"])
    s.add_argument("--out", required=True, type=Path, help="report JSON to write")
    s.add_argument("--data", type=Path, help="dataset directory (all metrics except uiqm)")
    s.add_argument("--images", type=Path, help="images named after dataset frames (default DATA/images)")
    s.add_argument("--board", type=Path, help="colorboard JSON (default DATA/colorboard.json)")
    s.add_argument("--ids", help="frame indices for color, comma list")
    s.add_argument("--tracks", type=Path, help="tracks JSON (default DATA/tracks.json)")
    s.add_argument("--truth", type=Path, help="reference images for psnr (default DATA/images)")
    s.add_argument("--depth", type=Path, help="predicted range maps NAME.pfm (depth metric)")
    s.set_defaults(func=cmd_eval)
    return p


def _check_eval_args(parser, args) -> None:
    if args.command != "eval":
        return
    if args.metric == "uiqm":
        if args.images is None:
            parser.error("eval uiqm requires --images")
    elif args.data is None:
        parser.error(f"eval {args.metric} requires --data")
    if args.metric == "depth" and args.depth is None:
        parser.error("eval depth requires --depth")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _check_eval_args(parser, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"waternerf: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, OSError) as exc:
        print(f"waternerf: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
