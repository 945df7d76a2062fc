"""Command-line entry point: ``quasirecon {gen-data,solve-ftog,train,evaluate}``.

Every command writes a manifest (``*.json``) recording the effective config,
seed and input digests next to its outputs.  Options come from ``--config``
(a JSON file) and are overridden by explicit flags.  Exit status is 0 on
success and 2 when any documented error fires.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cher import BathConfig, CherGridConfig, SpectralDensity, cher_marginal_triple
from .colormap import ColorMapConfig
from .dataset import PRESETS, Dataset, DatasetError, WignerPreset, build_dataset, resolve_preset
from .grids import MarginalTriple, uniform_axis
from .model import Checkpoint, ModelConfig, TrainConfig, build_model, predict, train
from .synth import SyntheticSample, analytic_marginals
from .verification import decode_and_project, gt_deficient_verify, l2_image, negativity_volume

log = logging.getLogger("quasirecon")

FTOG_PRESETS = {"cher-superohmic": SpectralDensity.super_ohmic, "cher-drudelorentz": SpectralDensity.drude_lorentz}
DEFAULT_TEMPERATURES = (3.6, 2.4)


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")
    tmp.replace(path)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    raise TypeError(type(o))


# --- commands ------------------------------------------------------------------


def cmd_gen_data(preset: str, out, seed: int, image_size: int = 256, counts=None, plan_only=False, overwrite=False):
    p = resolve_preset(preset)
    if counts is not None:
        p = p.with_counts(*counts)
    return build_dataset(p, out, seed, image_size=image_size, materialize=not plan_only, overwrite=overwrite)


def solve_ftog(preset: str, temperature: float, sd_overrides=None) -> dict:
    """FToG marginals at one temperature, on the normative and the dataset window."""
    sd = FTOG_PRESETS[preset](**(sd_overrides or {}))
    bath = BathConfig(float(temperature))
    normative = cher_marginal_triple(sd, bath)
    data_window = resolve_preset(preset).window
    grid = CherGridConfig(window=tuple(data_window))
    features = cher_marginal_triple(sd, bath, grid)
    return {
        "preset": preset,
        "temperature": float(temperature),
        "spectral_density": sd.to_dict(),
        "manifest": normative.meta,
        "marginals": normative.to_records(),
        "features": features.to_records(),
        "feature_window": list(data_window),
    }


def cmd_solve_ftog(preset: str, temperatures, out, sd_overrides=None):
    if preset not in FTOG_PRESETS:
        raise DatasetError(f"solve-ftog needs one of {sorted(FTOG_PRESETS)}")
    if not temperatures:
        log.warning("empty temperature list; nothing to solve")
        return []
    out = Path(out)
    written = []
    for T in temperatures:
        rec = solve_ftog(preset, T, sd_overrides)
        path = out / f"{preset}_T{T:g}.json"
        _write_json(path, rec)
        written.append(path)
    return written


def load_ftog(path) -> tuple[dict, MarginalTriple]:
    rec = json.loads(Path(path).read_text())
    grids = [r["grid"] for r in rec["features"]]
    vals = [r["values"] for r in rec["features"]]
    return rec, MarginalTriple.from_array(vals, grids, [r["axis_label"] for r in rec["features"]])


def cmd_train(dataset_path, out, model_size=None, seed=0, train_overrides=None, model_overrides=None, resume=False):
    ds = Dataset(dataset_path)
    if not ds.manifest["materialized"]:
        raise DatasetError("training needs a materialised dataset (not a plan-only manifest)")
    size = model_size or ds.manifest["image_size"]
    if size != ds.manifest["image_size"]:
        raise DatasetError(f"model size {size} does not match the dataset images ({ds.manifest['image_size']})")
    mcfg = ModelConfig(**{"output_size": size, **({"base_channels": 8} if size == 64 else {}), **(model_overrides or {})})
    tcfg = TrainConfig(**{"seed": seed, **(train_overrides or {})})
    out = Path(out)
    previous = None
    if resume:
        if not out.exists():
            raise DatasetError(f"--resume given but {out} does not exist")
        previous = Checkpoint.load(out)
        if previous.manifest_digest != ds.digest or previous.model_config != mcfg:
            raise DatasetError("checkpoint was trained on a different dataset or model config")
        # only the stopping rule may change on resume
        extend = {k: v for k, v in (train_overrides or {}).items() if k in ("epochs", "max_seconds")}
        if any(k not in extend for k in (train_overrides or {})):
            raise DatasetError("only epochs and max_seconds can be changed when resuming")
        tcfg = replace(previous.train_config, **extend)
    model = build_model(mcfg, seed=tcfg.seed)
    meta = {"window": list(ds.window), "colormap": ds.colormap.to_dict(), "kind": ds.manifest["kind"], "path": str(dataset_path)}
    ckpt = train(model, ds.features(), ds.labels(), tcfg, ds.manifest["feature_stats"], ds.digest, meta, resume=previous)
    ckpt.save(out)
    _plot_curve(ckpt.curve, out.with_suffix(".curve.png"))
    return ckpt


def _synthetic_gt(ds: Dataset, i: int) -> MarginalTriple:
    return analytic_marginals(SyntheticSample.from_row(ds.params("test")[i]), ds.window)


def _wigner_gt(ds: Dataset, i: int) -> MarginalTriple:
    q = uniform_axis(*ds.window, ds.manifest["marginal_points"])
    return MarginalTriple.from_array(ds.features("test")[i], [q] * 3, ("x", "p", "u"))


def cmd_evaluate(checkpoint, source: str, data, out, max_figures: int = 4):
    """Metrics (and figures) for a checkpoint on a test set or on FToG marginals."""
    ck = Checkpoint.load(checkpoint) if not isinstance(checkpoint, Checkpoint) else checkpoint
    model = ck.model()
    cmap = ColorMapConfig(**ck.dataset["colormap"])
    window = tuple(ck.dataset["window"])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    if source in ("synthetic-test", "wigner-test"):
        ds = Dataset(data)
        gt_of = _synthetic_gt if source == "synthetic-test" else _wigner_gt
        feats, labels = np.asarray(ds.features("test")), np.asarray(ds.labels("test"))
        preds = predict(model, feats)
        for i, (pimg, gimg) in enumerate(zip(preds, labels)):
            gt = gt_of(ds, i)
            rep = gt_deficient_verify(pimg, gt, cmap, window, gt_img=gimg)
            records.append({"index": i, **rep.to_dict()})
            if i < max_figures:
                _figure(out / f"{source}_{i:03d}.png", pimg, gt, cmap, window, gimg, grayscale_diff=source == "wigner-test")
    elif source == "ftog-marginals":
        paths = sorted(Path(data).glob("*.json")) if Path(data).is_dir() else [Path(data)]
        if not paths or not all(p.exists() for p in paths):
            raise DatasetError(f"no FToG marginal files at {data}")
        for path in paths:
            rec, gt = load_ftog(path)
            if tuple(rec["feature_window"]) != window:
                raise DatasetError(f"{path} was solved on {rec['feature_window']}, the model expects {window}")
            pimg = predict(model, gt.as_array())
            rep = gt_deficient_verify(pimg, gt, cmap, window)
            records.append({"source": path.name, "temperature": rec["temperature"], **rep.to_dict()})
            _figure(out / f"{path.stem}.png", pimg, gt, cmap, window)
    else:
        raise DatasetError(f"unknown evaluation source {source!r}")
    summary = _summarise(records)
    report = {"checkpoint": str(checkpoint), "source": source, "data": str(data), "summary": summary, "records": records}
    _write_json(out / "report.json", report)
    return report


def _summarise(records):
    if not records:
        return {}
    l1 = np.array([r["l1_per_marginal"] for r in records])
    rel = np.array([r["l1_relative"] for r in records])
    s = {
        "n": len(records),
        "mean_l1": l1.mean(axis=0).tolist(),
        "mean_l1_relative": float(rel.mean()),
        "mean_negativity_volume": float(np.mean([r["negativity_volume"] for r in records])),
        "unreliable": int(sum(not r["reliable"] for r in records)),
    }
    l2 = [r["l2_image"] for r in records if r["l2_image"] is not None]
    if l2:
        s["mean_l2_image"] = float(np.mean(l2))
    temps = [(r["temperature"], r["negativity_volume"]) for r in records if "temperature" in r]
    if temps:
        s["negativity_by_temperature"] = {f"{t:g}": v for t, v in sorted(temps)}
    return s


# --- figures -----------------------------------------------------------------


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _plot_curve(curve, path):
    if not curve:
        return
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 3))
    ep = [c["epoch"] for c in curve]
    ax.semilogy(ep, [c["train"] for c in curve], label="train")
    if curve[0].get("val") is not None:
        ax.semilogy(ep, [c["val"] for c in curve], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _figure(path, pimg, gt: MarginalTriple, cmap, window, gt_img=None, grayscale_diff=False):
    plt = _plt()
    joint, pred = decode_and_project(pimg, [m.grid for m in gt], [m.axis_label for m in gt], cmap, window)
    ncols = 3 + (gt_img is not None and grayscale_diff)
    fig, axes = plt.subplots(1, ncols + 1, figsize=(3.2 * (ncols + 1), 3))
    ext = [window[0], window[1], window[0], window[1]]
    W = joint.values.T
    lim = np.abs(W).max() or 1.0
    axes[0].imshow(W, origin="lower", extent=ext, cmap="RdBu_r", vmin=-lim, vmax=lim)
    axes[0].set_title("predicted joint")
    neg = np.minimum(W, 0.0)
    axes[1].imshow(neg, origin="lower", extent=ext, cmap="Blues_r", vmin=min(neg.min(), -1e-12), vmax=0)
    axes[1].set_title(f"negative part ({negativity_volume(joint):.2e})")
    for k, (g, p) in enumerate(zip(gt, pred)):
        ax = axes[2] if k < 2 else axes[3]
        ax.plot(g.grid, g.values, "k--", lw=1)
        ax.plot(p.grid, p.values, lw=1, label=p.axis_label)
    axes[2].set_title("axis marginals")
    axes[3].set_title("oblique marginal")
    axes[2].legend(fontsize=7)
    if ncols == 4:
        from .colormap import decode_image

        axis = np.linspace(window[0], window[1], gt_img.shape[-1])
        true = decode_image(gt_img, cmap, axis, axis).values.T
        axes[-1].imshow(np.abs(true - W), origin="lower", extent=ext, cmap="gray")
        axes[-1].set_title("|difference|")
    fig.tight_layout()
    fig.savefig(path, dpi=90)
    plt.close(fig)


# --- argument parsing ----------------------------------------------------------


def _parse_counts(text):
    parts = [int(v) for v in text.split(",")]
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError("counts are 'first,second[,test]'")
    return tuple(parts)


def _parse_temperatures(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser():
    ap = argparse.ArgumentParser(prog="quasirecon", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--config", type=Path, help="JSON file with option defaults")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a training dataset")
    g.add_argument("--preset", choices=PRESETS, required=True)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--model-size", type=int, choices=(64, 128, 256), default=256, help="label image size")
    g.add_argument("--counts", type=_parse_counts, help="override counts, e.g. 667,1333,100")
    g.add_argument("--plan-only", action="store_true", help="write parameter tables and manifest only")
    g.add_argument("--overwrite", action="store_true")

    s = sub.add_parser("solve-ftog", help="ground-truth marginals from the dephasing factors")
    s.add_argument("--preset", choices=sorted(FTOG_PRESETS), required=True)
    s.add_argument("--temperatures", type=_parse_temperatures, default=list(DEFAULT_TEMPERATURES))
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--eta", type=float)

    t = sub.add_parser("train", help="train the generator")
    t.add_argument("--dataset", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--model-size", type=int, choices=(64, 128, 256))
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--max-seconds", type=float)
    t.add_argument("--resume", action="store_true")

    e = sub.add_parser("evaluate", help="metrics and figures for a checkpoint")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--source", choices=("synthetic-test", "ftog-marginals", "wigner-test"), required=True)
    e.add_argument("--data", type=Path, required=True, help="dataset directory or FToG file/directory")
    e.add_argument("--out", type=Path, required=True)
    return ap


def _apply_config(args, parser):
    if not args.config:
        return args
    cfg = json.loads(args.config.read_text())
    section = {**cfg.get("common", {}), **cfg.get(args.command, {})}
    defaults = vars(parser.parse_args([args.command] + _required_stub(args)))
    for key, value in section.items():
        key = key.replace("-", "_")
        if not hasattr(args, key):
            raise DatasetError(f"unknown config key {key!r} for {args.command}")
        if getattr(args, key) == defaults.get(key):
            setattr(args, key, value)
    return args


def _required_stub(args):
    # re-parse with the same required options so untouched defaults can be told apart
    req = {"gen-data": ["preset", "out"], "solve-ftog": ["preset", "out"], "train": ["dataset", "out"],
           "evaluate": ["checkpoint", "source", "data", "out"]}[args.command]
    out = []
    for k in req:
        out += [f"--{k.replace('_', '-')}", str(getattr(args, k))]
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = _apply_config(args, parser)
        if args.command == "gen-data":
            m = cmd_gen_data(args.preset, args.out, args.seed, args.model_size, args.counts, args.plan_only, args.overwrite)
            print(json.dumps({"digest": m["digest"], "splits": m["splits"]}))
        elif args.command == "solve-ftog":
            over = {"eta": args.eta} if args.eta else None
            for p in cmd_solve_ftog(args.preset, args.temperatures, args.out, over):
                print(p)
        elif args.command == "train":
            over = {k: getattr(args, k) for k in ("epochs", "learning_rate", "batch_size", "max_seconds") if getattr(args, k) is not None}
            ck = cmd_train(args.dataset, args.out, args.model_size, args.seed, over, resume=args.resume)
            print(json.dumps(ck.curve[-1] if ck.curve else {}))
        elif args.command == "evaluate":
            rep = cmd_evaluate(args.checkpoint, args.source, args.data, args.out)
            print(json.dumps(rep["summary"]))
    except (ValueError, RuntimeError, ArithmeticError, OSError, KeyError) as exc:
        print(f"quasirecon: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
