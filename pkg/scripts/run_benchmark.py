#!/usr/bin/env python3
"""Train all five backbone families on one synthetic corpus and rank them.

Generates a train/test split once, trains each family with identical
hyperparameters, and prints the comparison table (pixels and centimeters
at 4 cm/px). Per-family outputs land in --out/<kind>/, the combined table
in --out/report.csv.
"""

import argparse
import json
import time
from pathlib import Path

from icereg.backbones import ArchitectureSpec, BACKBONE_KINDS, build_model
from icereg.synthgen import SceneSpec, generate_dataset
from icereg.training import (TrainConfig, predict_mean_baseline, report_table,
                             save_training_checkpoint, train)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-train", type=int, default=512)
    parser.add_argument("--n-test", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--lr", type=float, default=2e-4)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", default="runs/benchmark")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scene = SceneSpec(height=64, width=64, num_layers=5,
                      mean_layer_thickness_px=8.0, thickness_jitter=0.5,
                      undulation_wavelength_px=32.0, noise_sigma=0.02)
    train_set, test_set = generate_dataset(scene, args.n_train, args.n_test,
                                           base_seed=args.seed,
                                           out_dir=out / "data")
    baseline = predict_mean_baseline(train_set, test_set)
    print(f"predict-mean baseline: {baseline:.4f} px test MAE")

    arch = ArchitectureSpec(input_height=scene.height, input_width=scene.width)
    config = TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                         batch_size=args.batch_size, seed=args.seed)
    results = []
    for kind in BACKBONE_KINDS:
        run_dir = out / kind
        run_dir.mkdir(exist_ok=True)
        started = time.monotonic()
        model = build_model(kind, arch, seed=args.seed)
        model, record = train(model, train_set, config, eval_set=test_set)
        elapsed = time.monotonic() - started

        record.write(run_dir / "loss.csv")
        save_training_checkpoint(model, run_dir / "model.ictk", model.adam_state)
        train_mae, test_mae = record.rows[-1][1], record.rows[-1][2]
        with open(run_dir / "result.json", "w") as f:
            json.dump({"backbone": kind, "train_mae_px": train_mae,
                       "test_mae_px": test_mae}, f, indent=2)
            f.write("\n")
        results.append((kind, train_mae, test_mae))
        print(f"{kind}: train {train_mae:.4f} px, test {test_mae:.4f} px "
              f"({elapsed:.0f}s)")

    table, csv_text = report_table(results)
    print()
    print(table, end="")
    with open(out / "report.csv", "w", newline="") as f:
        f.write(csv_text)


if __name__ == "__main__":
    main()
