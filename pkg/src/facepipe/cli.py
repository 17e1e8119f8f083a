"""Command-line interface.

Subcommands: normalize, mask, split, train, eval, report, run-all.
Flags may also come from a JSON config file (--config); explicit flags
override file values. All outputs land under --out with fixed names, so
reruns with identical inputs and seeds are bit-identical.

Exit codes: 0 = success, 1 = fatal error, 2 = completed with per-sample
failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .charts import ChartSpec, write_bar_chart_svg
from .dataset import (
    EmotionLabel,
    FoldPlan,
    Manifest,
    class_counts,
    filter_single_label,
    parse_manifest,
    stratified_kfold,
)
from .errors import FacepipeError
from .image import read_png, write_png
from .metrics import (
    MetricsReport,
    build_report,
    confusion,
    report_csv_header,
    report_to_csv,
    report_to_json,
)
from .pipeline import NormalizeConfig, default_workers, mask_half, normalize_face
from .trainer import CONDITIONS, TrainConfig, history_to_csv, run_cv

_CONFIG_KEYS = (
    "manifest", "images", "out", "condition", "k", "seed", "zoom", "size",
    "bs", "epochs_a", "epochs_b", "rho", "lr", "weighting", "patience",
    "skip_missing",
)


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    unknown = set(obj) - set(_CONFIG_KEYS)
    if unknown:
        raise FacepipeError(f"unknown config keys: {sorted(unknown)}")
    return obj


def _merged(args: argparse.Namespace, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    config = getattr(args, "_config", {})
    return config.get(name, default)


def _normalize_config(args) -> NormalizeConfig:
    return NormalizeConfig(
        zoom_factor=float(_merged(args, "zoom", 1.10)),
        output_size=int(_merged(args, "size", 64)),
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        batch_size=int(_merged(args, "bs", 16)),
        stage_a_epochs=int(_merged(args, "epochs_a", 20)),
        stage_b_epochs=int(_merged(args, "epochs_b", 50)),
        learning_rate=float(_merged(args, "lr", 0.05)),
        sam_rho=float(_merged(args, "rho", 0.05)),
        class_weighting=str(_merged(args, "weighting", "inverse_frequency")),
        early_stop_patience=int(_merged(args, "patience", 5)),
        seed=int(_merged(args, "seed", 0)),
        input_edge=int(_merged(args, "size", 64)),
    )


def _require(args, name: str) -> str:
    value = _merged(args, name, None)
    if value is None:
        raise FacepipeError(f"--{name.replace('_', '-')} is required")
    return value


def _out_dir(args) -> Path:
    out = Path(_require(args, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- normalize ---------------------------------------------------------------

def _normalize_record(rec, images_root: Path, norm_dir: Path, cfg: NormalizeConfig):
    if rec.landmarks is None or rec.box is None:
        return rec.id, "missing landmarks or box"
    src = images_root / rec.image_path
    try:
        img = read_png(src)
        sample = normalize_face(img, rec.box, rec.landmarks, cfg)
        stem = Path(rec.image_path).stem
        write_png(sample.image, norm_dir / f"{stem}_norm.png")
        write_png(mask_half(sample.image, "top"), norm_dir / f"{stem}_norm_top.png")
        write_png(mask_half(sample.image, "bottom"), norm_dir / f"{stem}_norm_bottom.png")
        return rec.id, None
    except Exception as exc:  # noqa: BLE001 - per-sample isolation
        return rec.id, f"{type(exc).__name__}: {exc}"


def cmd_normalize(args) -> int:
    manifest = parse_manifest(_require(args, "manifest"))
    images_root = Path(_require(args, "images"))
    out = _out_dir(args)
    norm_dir = out / "normalized"
    norm_dir.mkdir(parents=True, exist_ok=True)
    cfg = _normalize_config(args)
    cfg.validate()
    skip_missing = bool(_merged(args, "skip_missing", False))

    todo = []
    skipped = 0
    for rec in manifest.records:
        if skip_missing and (rec.landmarks is None or rec.box is None):
            skipped += 1
            continue
        todo.append(rec)

    workers = default_workers()
    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda rec: _normalize_record(rec, images_root, norm_dir, cfg), todo
            ))
    else:
        results = [_normalize_record(rec, images_root, norm_dir, cfg) for rec in todo]

    failures = [(rid, err) for rid, err in results if err is not None]
    for rid, err in failures:
        print(f"normalize: {rid}: {err}", file=sys.stderr)
    print(f"normalize: {len(todo) - len(failures)} processed, {len(failures)} failed, {skipped} skipped")
    return 2 if failures else 0


# --- mask --------------------------------------------------------------------

def cmd_mask(args) -> int:
    images_dir = Path(_require(args, "images"))
    out = _out_dir(args)
    mode = _merged(args, "condition", None)
    if mode not in ("top", "bottom"):
        raise FacepipeError("--condition must be 'top' or 'bottom' for mask")
    files = sorted(images_dir.glob("*.png"))
    if not files:
        raise FacepipeError(f"no .png files in {images_dir}")
    for path in files:
        write_png(mask_half(read_png(path), mode), out / f"{path.stem}_{mode}.png")
    print(f"mask: {len(files)} images written ({mode})")
    return 0


# --- split ---------------------------------------------------------------------

def _filtered(manifest_path: str) -> Manifest:
    return filter_single_label(parse_manifest(manifest_path))


def cmd_split(args) -> int:
    filtered = _filtered(_require(args, "manifest"))
    k = int(_merged(args, "k", 5))
    seed = int(_merged(args, "seed", 0))
    plan = stratified_kfold(filtered, k, seed)
    out = _out_dir(args)
    (out / "folds.json").write_text(plan.to_json(), encoding="utf-8")
    counts = class_counts(filtered)
    summary = ", ".join(f"{label.value}={n}" for label, n in counts.items())
    print(f"split: {len(filtered)} records into {k} folds (seed {seed}); {summary}")
    return 0


# --- train / eval ----------------------------------------------------------------

def _predictions_path(out: Path, condition: str) -> Path:
    return out / f"predictions_{condition}.csv"


def cmd_train(args) -> int:
    filtered = _filtered(_require(args, "manifest"))
    out = _out_dir(args)
    condition = _merged(args, "condition", "full")
    if condition not in CONDITIONS:
        raise FacepipeError(f"--condition must be one of {CONDITIONS}")
    folds_path = out / "folds.json"
    if not folds_path.exists():
        raise FacepipeError(f"fold plan not found: {folds_path} (run 'split' first)")
    plan = FoldPlan.from_json(folds_path.read_text(encoding="utf-8"))
    cfg = _train_config(args)

    pairs, histories = run_cv(filtered, plan, cfg, condition, out / "normalized")

    lines = ["id,true,predicted"]
    for rec, (predicted, true) in zip(filtered.records, pairs):
        lines.append(f"{rec.id},{true.value},{predicted.value}")
    _predictions_path(out, condition).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for fold, history in enumerate(histories):
        path = out / f"history_{condition}_fold{fold}.csv"
        path.write_text(history_to_csv(history), encoding="utf-8")
    correct = sum(1 for predicted, true in pairs if predicted == true)
    print(f"train: condition {condition}, {len(pairs)} pooled predictions, "
          f"accuracy {correct / len(pairs):.3f}")
    return 0


def _read_predictions(path: Path) -> list[tuple[EmotionLabel, EmotionLabel]]:
    pairs = []
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "id,true,predicted":
        raise FacepipeError(f"{path}: not a predictions file")
    for line in lines[1:]:
        _, true, predicted = line.split(",")
        pairs.append((EmotionLabel(predicted), EmotionLabel(true)))
    return pairs


def _report_for_condition(out: Path, filtered: Manifest, condition: str) -> MetricsReport:
    pred_path = _predictions_path(out, condition)
    if not pred_path.exists():
        raise FacepipeError(f"predictions not found: {pred_path} (run 'train' first)")
    pairs = _read_predictions(pred_path)
    cm = confusion(pairs, filtered.ordered_classes())
    return build_report(cm)


def cmd_eval(args) -> int:
    filtered = _filtered(_require(args, "manifest"))
    out = _out_dir(args)
    condition = _merged(args, "condition", "full")
    if condition not in CONDITIONS:
        raise FacepipeError(f"--condition must be one of {CONDITIONS}")
    report = _report_for_condition(out, filtered, condition)
    (out / f"report_{condition}.json").write_text(report_to_json(report, condition), encoding="utf-8")
    (out / f"report_{condition}.csv").write_text(report_to_csv(report, condition), encoding="utf-8")

    classes = tuple(c.value for c in report.classes)
    spec = ChartSpec(
        classes=classes,
        series={condition: {
            c.value: report.per_class_sensitivity.get(c) for c in report.classes
        }},
        summary={condition: report.mean_sensitivity},
        title=f"Per-class sensitivity ({condition})",
    )
    write_bar_chart_svg(spec, out / f"chart_{condition}.svg")
    print(f"eval: condition {condition}, accuracy {report.accuracy:.3f}, "
          f"mean sensitivity {report.mean_sensitivity:.3f}")
    return 0


# --- report ------------------------------------------------------------------------

def _load_report_json(path: Path) -> dict:
    obj = json.loads(path.read_text(encoding="utf-8"))
    for key in ("label", "classes", "accuracy", "per_class_sensitivity",
                "mean_sensitivity", "weighted_sensitivity", "sensitivity_sd"):
        if key not in obj:
            raise FacepipeError(f"{path}: missing report field {key!r}")
    return obj


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.reports]
    if not paths:
        raise FacepipeError("at least one report file is required")
    out = _out_dir(args)
    reports = [_load_report_json(p) for p in paths]
    classes = reports[0]["classes"]
    for obj, path in zip(reports, paths):
        if obj["classes"] != classes:
            raise FacepipeError(f"{path}: class list differs from {paths[0]}")

    header = report_csv_header(classes)
    rows = []
    for obj in reports:
        cells = [obj["label"], repr(float(obj["accuracy"]))]
        for cls in classes:
            s = obj["per_class_sensitivity"].get(cls)
            cells.append("" if s is None else repr(float(s)))
        cells.append(repr(float(obj["weighted_sensitivity"]["uniform"])))
        cells.append(repr(float(obj["mean_sensitivity"])))
        cells.append(repr(float(obj["sensitivity_sd"])))
        rows.append(cells)

    csv_lines = [",".join(header)] + [",".join(row) for row in rows]
    (out / "summary.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    display = [header] + [
        [row[0]] + [f"{float(c):.3f}" if c else "-" for c in row[1:]] for row in rows
    ]
    widths = [max(len(r[i]) for r in display) for i in range(len(header))]
    text_lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in display]
    (out / "summary.txt").write_text("\n".join(text_lines) + "\n", encoding="utf-8")
    print("\n".join(text_lines))
    return 0


# --- run-all -----------------------------------------------------------------------

def cmd_run_all(args) -> int:
    status = cmd_normalize(args)
    if status == 1:
        return status
    rc = cmd_split(args)
    if rc != 0:
        return rc
    out = _out_dir(args)
    filtered = _filtered(_require(args, "manifest"))
    reports: dict[str, MetricsReport] = {}
    for condition in CONDITIONS:
        sub = argparse.Namespace(**{**vars(args), "condition": condition})
        rc = cmd_train(sub)
        if rc != 0:
            return rc
        rc = cmd_eval(sub)
        if rc != 0:
            return rc
        reports[condition] = _report_for_condition(out, filtered, condition)

    report_args = argparse.Namespace(
        reports=[str(out / f"report_{c}.json") for c in CONDITIONS],
        out=str(out), _config={},
    )
    rc = cmd_report(report_args)
    if rc != 0:
        return rc

    classes = tuple(c.value for c in filtered.ordered_classes())
    spec = ChartSpec(
        classes=classes,
        series={
            condition: {
                c.value: rep.per_class_sensitivity.get(c) for c in rep.classes
            }
            for condition, rep in reports.items()
        },
        summary={condition: rep.mean_sensitivity for condition, rep in reports.items()},
        title="Per-class sensitivity by condition",
    )
    write_bar_chart_svg(spec, out / "chart_all.svg")
    return status


# --- argument parsing -----------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with flag defaults")
    parser.add_argument("--manifest", help="manifest CSV path")
    parser.add_argument("--images", help="image root (normalize) or image dir (mask)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--condition", choices=("full", "top", "bottom"),
                        help="image condition")
    parser.add_argument("--k", type=int, help="fold count (default 5)")
    parser.add_argument("--seed", type=int, help="RNG seed (default 0)")
    parser.add_argument("--zoom", type=float, help="box zoom-out factor (default 1.10)")
    parser.add_argument("--size", type=int, help="output edge in pixels (default 64)")
    parser.add_argument("--bs", type=int, help="batch size (default 16)")
    parser.add_argument("--epochs-a", dest="epochs_a", type=int,
                        help="head-only epochs (default 20)")
    parser.add_argument("--epochs-b", dest="epochs_b", type=int,
                        help="full-model epochs (default 50)")
    parser.add_argument("--rho", type=float, help="SAM perturbation radius (default 0.05)")
    parser.add_argument("--lr", type=float, help="learning rate (default 0.05)")
    parser.add_argument("--weighting", choices=("none", "inverse_frequency"),
                        help="class weighting (default inverse_frequency)")
    parser.add_argument("--patience", type=int, help="early-stop patience (default 5)")
    parser.add_argument("--skip-missing", dest="skip_missing", action="store_const",
                        const=True, help="skip records without landmarks/box")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facepipe",
        description="Face normalization, half-face masking, and cross-validated "
                    "expression-classifier training.",
    )
    parser.add_argument("--version", action="version", version=f"facepipe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "normalize": ("write _norm/_norm_top/_norm_bottom images for a manifest", cmd_normalize),
        "mask": ("apply half-face masking to a directory of images", cmd_mask),
        "split": ("write a stratified fold plan (folds.json)", cmd_split),
        "train": ("cross-validated training; writes pooled predictions", cmd_train),
        "eval": ("metrics report and chart from pooled predictions", cmd_eval),
        "report": ("merge report JSON files into one comparison table", cmd_report),
        "run-all": ("normalize, split, train+eval all conditions, merge reports", cmd_run_all),
    }
    for name, (help_text, func) in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "report":
            p.add_argument("reports", nargs="*", help="report JSON files to merge")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._config = _load_config(args.config)
    except (OSError, json.JSONDecodeError, FacepipeError) as exc:
        return _fail(str(exc))
    try:
        return args.func(args)
    except (FacepipeError, OSError, ValueError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
