"""Batch command-line interface.

Exit codes: 0 success, 1 invalid input or config, 2 usage error, 3 I/O
error, 4 dataset manifest error, 5 partial failure (some images failed),
6 unreadable or incompatible model file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import RunConfig, format_config, load_config
from .errors import ImageFormatError, ImageReadError, ManifestError, ModelFormatError, PVScreenError
from .evaluation import evaluate_predictions, severity_metrics, stratified_split
from .features import FEATURE_NAMES, extract_features, write_feature_csv
from .imaging import load_image
from .plots import plot_confusion, plot_roc, plot_training_log
from .severity import fit_forest, grade, load_forest, predict_score, save_forest
from .taxonomy import CLASS_SLUGS, DefectClass
from .vit import export_weights, import_weights, init_model, predict_proba, train

log = logging.getLogger("pvscreen")

EXIT_OK, EXIT_INPUT, EXIT_USAGE, EXIT_IO, EXIT_MANIFEST, EXIT_PARTIAL, EXIT_MODEL = 0, 1, 2, 3, 4, 5, 6

PREDICT_HEADER = (["image_id", "status", "predicted_class"] + [f"p_{s}" for s in CLASS_SLUGS]
                  + FEATURE_NAMES + ["severity_score", "grade", "error"])


def split_manifest_path(model_path) -> Path:
    return Path(str(model_path) + ".split.csv")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _load_images(items):
    return [load_image(item.path) for item in items]


def cmd_print_config(args) -> int:
    sys.stdout.write(format_config(_config(args)))
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    n = ds.write_synthetic(args.out, per_class=args.per_class, size=args.size,
                           seed=args.seed if args.seed is not None else 0)
    print(f"wrote {n} images to {args.out}")
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    cfg = _config(args)
    manifest = ds.load_manifest(args.dataset)
    train_idx, test_idx = stratified_split(manifest.labels, cfg.run.split_fraction, cfg.run.seed)
    train_items = [manifest.items[i] for i in train_idx]
    data = list(zip(_load_images(train_items), [item.label for item in train_items]))
    print(f"train {len(train_idx)} / test {len(test_idx)} images")

    model = init_model(cfg.vit, np.random.default_rng([cfg.run.seed, 1]))

    def report(entry, _model):
        print(f"epoch {entry.epoch:4d}  loss {entry.loss:.4f}  acc {entry.accuracy:.4f}", flush=True)

    _, epochs = train(model, data, cfg.optimizer, cfg.run.epochs, cfg.run.batch_size, cfg.run.selector,
                      np.random.default_rng([cfg.run.seed, 2]), cfg.effective_augmentation(),
                      cfg.normalization.mean, cfg.normalization.std, callback=report)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_weights(model, out)
    ds.write_split_manifest(split_manifest_path(out), manifest.items, train_idx, test_idx)
    with open(str(out) + ".log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "accuracy"])
        for e in epochs:
            writer.writerow([e.epoch, repr(e.loss), repr(e.accuracy)])
    if epochs:
        plot_training_log(epochs, str(out) + ".loss.png")
    print(f"model written to {out}")
    return EXIT_OK


def _classify(model, images, cfg):
    probs = predict_proba(model, images, cfg.normalization.mean, cfg.normalization.std)
    return probs, [DefectClass(int(k)) for k in probs.argmax(axis=1)]


def _labeled_items(manifest, split_path):
    if manifest.severity_csv is None:
        raise ManifestError(f"dataset {manifest.root} has no {ds.SEVERITY_CSV}")
    labels = ds.read_severity_csv(manifest.severity_csv)
    allowed = None
    if split_path:
        allowed = set(ds.read_split_manifest(split_path)[0])
    items, targets = [], []
    by_id = manifest.by_id()
    for image_id, g in labels.items():
        if allowed is not None and image_id not in allowed:
            continue
        item = by_id.get(image_id)
        if item is None or not item.path.is_file():
            log.warning("severity label for %s has no image on disk; skipped", image_id)
            continue
        items.append(item)
        targets.append(int(g))
    return items, targets


def cmd_train_severity(args) -> int:
    cfg = _config(args)
    manifest = ds.load_manifest(args.dataset)
    model = import_weights(args.model)
    items, targets = _labeled_items(manifest, args.split)
    if not items:
        raise PVScreenError("no usable severity-labelled images")
    images = _load_images(items)
    _, predicted = _classify(model, images, cfg)
    vectors = [extract_features(img, c) for img, c in zip(images, predicted)]
    X = np.stack([v.as_array() for v in vectors])
    y = np.asarray(targets, dtype=np.float64)
    forest = fit_forest(X, y, cfg.forest)
    mse = float(np.mean((forest.predict(X) - y) ** 2))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_forest(forest, out)
    write_feature_csv(str(out) + ".features.csv",
                      [(item.image_id, c, v) for item, c, v in zip(items, predicted, vectors)])
    print(f"forest of {len(forest.trees)} trees on {len(items)} images, training MSE {mse:.6f}")
    print(f"forest written to {out}")
    return EXIT_OK


def cmd_extract_features(args) -> int:
    cfg = _config(args)
    manifest = ds.load_manifest(args.dataset)
    model = import_weights(args.model)
    images = _load_images(manifest.items)
    _, predicted = _classify(model, images, cfg)
    write_feature_csv(args.out, [(item.image_id, c, extract_features(img, c))
                                 for item, img, c in zip(manifest.items, images, predicted)])
    print(f"features for {len(images)} images written to {args.out}")
    return EXIT_OK


def _collect_inputs(paths):
    """``(image_id, path)`` pairs; directories are walked recursively and ids are relative to them."""
    inputs = []
    for p in map(Path, paths):
        if p.is_dir():
            found = sorted(f for f in p.rglob("*") if f.is_file() and f.suffix.lower() in ds.IMAGE_SUFFIXES)
            inputs.extend((f.relative_to(p).as_posix(), f) for f in found)
        else:
            inputs.append((p.name, p))
    return inputs


def cmd_predict(args) -> int:
    cfg = _config(args)
    model = import_weights(args.model)
    forest = load_forest(args.forest)
    failures = 0
    rows = []
    for image_id, path in _collect_inputs(args.inputs):
        try:
            img = load_image(path)
        except (ImageReadError, ImageFormatError) as exc:
            failures += 1
            log.error("%s", exc)
            rows.append([image_id, "error"] + [""] * (len(PREDICT_HEADER) - 3) + [str(exc)])
            continue
        probs, (cls,) = _classify(model, [img], cfg)
        vec = extract_features(img, cls)
        score = predict_score(forest, vec)
        g = grade(score, forest.grade_thresholds)
        rows.append([image_id, "ok", cls.slug] + [repr(float(p)) for p in probs[0]]
                    + [repr(float(v)) for v in vec.as_array()] + [repr(score), g.slug, ""])
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    try:
        writer = csv.writer(out)
        writer.writerow(PREDICT_HEADER)
        writer.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    if failures:
        log.error("%d of %d images failed", failures, len(rows))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    manifest = ds.load_manifest(args.dataset)
    model = import_weights(args.model)
    forest = load_forest(args.forest) if args.forest else None
    split_path = args.split or split_manifest_path(args.model)
    train_ids, test_ids = ds.read_split_manifest(split_path)
    by_id = manifest.by_id()
    missing = [i for i in test_ids if i not in by_id]
    if missing:
        raise ManifestError(f"{len(missing)} test images from {split_path} are not in the dataset, e.g. {missing[0]}")
    items = [by_id[i] for i in test_ids]
    if not items:
        raise ManifestError(f"{split_path} lists no test images")
    images = _load_images(items)
    probs, predicted = _classify(model, images, cfg)
    y = [int(item.label) for item in items]
    report = evaluate_predictions(y, probs)
    if forest is not None and manifest.severity_csv is not None:
        labels = ds.read_severity_csv(manifest.severity_csv)
        targets = [labels.get(item.image_id) for item in items]
        report.severity_mse, report.severity_grade_accuracy = severity_metrics(forest, images, predicted, targets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    (out / "report.json").write_text(report.to_json() + "\n")
    plot_confusion(report.confusion, out / "confusion.png")
    plot_roc(y, probs, report.per_class_auc, out / "roc.png")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvscreen", description="Solar panel surface-fault screening.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI run configuration (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.set_defaults(func=func)
        return p

    add("print-config", cmd_print_config, "print the effective configuration")

    p = add("make-synthetic", cmd_make_synthetic, "write the procedural 9-class dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--size", type=int, default=64)

    p = add("train-classifier", cmd_train_classifier, "split the dataset and train the classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output model file")

    p = add("train-severity", cmd_train_severity, "fit the severity forest")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", help="split manifest; restricts fitting to training images")
    p.add_argument("--out", required=True, help="output forest file")

    p = add("extract-features", cmd_extract_features, "write region features for every image")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "classify and grade images")
    p.add_argument("--model", required=True)
    p.add_argument("--forest", required=True)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.add_argument("inputs", nargs="+", help="image files or directories (searched recursively)")

    p = add("evaluate", cmd_evaluate, "score held-out images from a split manifest")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--forest")
    p.add_argument("--split", help="split manifest (default: <model>.split.csv)")
    p.add_argument("--out", required=True, help="report directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ImageReadError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ManifestError as exc:
        log.error("%s", exc)
        return EXIT_MANIFEST
    except ModelFormatError as exc:
        log.error("%s", exc)
        return EXIT_MODEL
    except (PVScreenError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
