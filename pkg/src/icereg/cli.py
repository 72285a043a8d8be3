"""Command-line entry point.

Subcommands: extract, synth, train, eval, gradcheck, report.
Exit codes: 0 success, 1 check failure, 2 usage/input error.
Every run that writes outputs also writes its resolved configuration as
JSON next to them, so runs are reproducible from the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, pgm, synthgen
from .backbones import (ArchitectureSpec, BACKBONE_KINDS, build_model,
                        load_model)
from .errors import IceregError
from .groundtruth import (DEFAULT_CM_PER_PIXEL, LayerMask, extract_thickness,
                          load_manifest, pixels_to_cm, validate_mask,
                          write_thickness_csv)
from .training import (TrainConfig, evaluate, report_table,
                       restore_adam_state, save_training_checkpoint, train)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def cmd_extract(args) -> int:
    masks_dir = Path(args.masks_dir)
    if not masks_dir.is_dir():
        print(f"error: mask directory not found: {masks_dir}", file=sys.stderr)
        return EXIT_USAGE
    paths = sorted(masks_dir.glob("*.pgm"))
    rows = []
    for path in paths:
        try:
            mask = LayerMask(pgm.load_mask(path))
        except IceregError as exc:
            print(f"error: unreadable mask {path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        for warning in validate_mask(mask):
            print(f"warning: {path.name}: {warning}", file=sys.stderr)
        rows.append((path.stem, extract_thickness(mask)))
    if not rows:
        print(f"warning: no PGM masks found in {masks_dir}", file=sys.stderr)
    write_thickness_csv(args.out_csv, rows)
    print(f"wrote {len(rows)} thickness rows to {args.out_csv}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = synthgen.SceneSpec.from_json(_load_config_file(args.spec))
    except (IceregError, TypeError) as exc:
        print(f"error: invalid scene spec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    try:
        synthgen.generate_dataset(spec, args.n_train, args.n_test, args.seed, out_dir)
    except IceregError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _write_json(out_dir / "run_config.json",
                {"command": "synth", "scene_spec": spec.to_json(),
                 "n_train": args.n_train, "n_test": args.n_test, "seed": args.seed})
    print(f"wrote {args.n_train + args.n_test} samples to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.backbone not in BACKBONE_KINDS:
        print(f"error: unknown backbone {args.backbone!r}; valid kinds: "
              f"{', '.join(BACKBONE_KINDS)}", file=sys.stderr)
        return EXIT_USAGE
    file_cfg = _load_config_file(args.config)
    arch = ArchitectureSpec.from_json(file_cfg.get("architecture", {}))

    cfg_fields = dict(file_cfg.get("training", {}))
    # CLI flags override config-file values override dataclass defaults
    for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"),
                      ("batch_size", "batch_size"), ("seed", "seed")):
        value = getattr(args, flag)
        if value is not None:
            cfg_fields[key] = value
    config = TrainConfig(**cfg_fields)

    try:
        config.validate()
        train_set = load_manifest(args.manifest, "train")
        eval_set = load_manifest(args.manifest, "test")
        if len(eval_set) == 0:
            eval_set = None
        model = build_model(args.backbone, arch, config.seed)
        model, record = train(model, train_set, config, eval_set=eval_set)
    except IceregError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_training_checkpoint(model, out_dir / "model.ictk",
                             getattr(model, "adam_state", None))
    record.write(out_dir / "loss.csv")
    final_train = record.rows[-1][1]
    final_test = record.rows[-1][2]
    result = {"backbone": args.backbone, "train_mae_px": final_train,
              "test_mae_px": final_test}
    _write_json(out_dir / "result.json", result)
    _write_json(out_dir / "run_config.json",
                {"command": "train", "backbone": args.backbone,
                 "manifest": str(args.manifest),
                 "architecture": arch.to_json(),
                 "training": dataclasses.asdict(config)})
    print(f"final train MAE: {final_train:.4f} px")
    if final_test is not None:
        print(f"final test MAE: {final_test:.4f} px")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, _ = load_model(args.checkpoint)
        dataset = load_manifest(args.manifest, args.split)
        if len(dataset) == 0:
            print(f"error: split {args.split!r} has no samples", file=sys.stderr)
            return EXIT_USAGE
        if args.resolution is not None:
            dataset.resolution_cm_per_pixel = args.resolution
        mae_px = evaluate(model, dataset)
    except IceregError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    mae_cm = pixels_to_cm(mae_px, dataset.resolution_cm_per_pixel)
    print(f"{args.split} MAE: {mae_px:.6f} px ({mae_cm:.6f} cm at "
          f"{dataset.resolution_cm_per_pixel} cm/px)")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / f"eval_{args.split}.json",
                    {"split": args.split, "mae_px": mae_px, "mae_cm": mae_cm,
                     "checkpoint": str(args.checkpoint)})
    return EXIT_OK


def cmd_gradcheck(args, checks=None) -> int:
    results = gradcheck.run_all(checks)
    ok = True
    for name, err, threshold, passed in results:
        status = "ok" if passed else "FAIL"
        print(f"{name:<28} max_rel_err={err:.3e} threshold={threshold:.0e} {status}")
        ok = ok and passed
    if not ok:
        failed = [name for name, _, _, passed in results if not passed]
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_report(args) -> int:
    results_dir = Path(args.results_dir)
    if not results_dir.is_dir():
        print(f"error: results directory not found: {results_dir}", file=sys.stderr)
        return EXIT_USAGE
    rows = []
    for path in sorted(results_dir.rglob("result.json")):
        with open(path) as f:
            doc = json.load(f)
        if doc.get("test_mae_px") is None:
            print(f"warning: {path} has no test MAE, skipped", file=sys.stderr)
            continue
        rows.append((doc["backbone"], float(doc["train_mae_px"]),
                     float(doc["test_mae_px"])))
    if not rows:
        print(f"error: no result.json files with test MAE under {results_dir}",
              file=sys.stderr)
        return EXIT_USAGE
    table, csv_text = report_table(rows, args.resolution)
    print(table, end="")
    with open(results_dir / "report.csv", "w", newline="") as f:
        f.write(csv_text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icereg",
        description="Ice-layer thickness regression: synthetic data, "
                    "ground-truth extraction, CNN training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="thickness CSV from a directory of label masks")
    p.add_argument("masks_dir")
    p.add_argument("out_csv")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="scene spec JSON file (defaults used if omitted)")
    p.add_argument("--n-train", type=int, default=4)
    p.add_argument("--n-test", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a backbone on a dataset manifest")
    p.add_argument("manifest")
    p.add_argument("--backbone", required=True)
    p.add_argument("--config", help="JSON with 'architecture' and 'training' sections")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--resolution", type=float, default=None,
                   help=f"cm per pixel (default {DEFAULT_CM_PER_PIXEL})")
    p.add_argument("--out", help="optional directory for the eval JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="comparison table from training results")
    p.add_argument("results_dir")
    p.add_argument("--resolution", type=float, default=DEFAULT_CM_PER_PIXEL)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
