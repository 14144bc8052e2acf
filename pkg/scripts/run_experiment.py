"""Desk-scale end-to-end experiment.

Generates a synthetic PE corpus with temporal drift, trains one toy model
per training-noise family, then reports for each defense: clean metrics,
adversarial accuracy under a padding-attack budget sweep (with AUT), and
per-month accuracy on the drifted test window.  Reports land as JSON under
--out; a summary table prints to stdout.

Scaled to finish in a few minutes on one core.  Raise --n-train, --n-test,
--opt-budget, and --epochs (or switch --preset full) for a real run.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from byteshield.classifier import (  # noqa: E402
    FULL_CONFIG,
    TOY_CONFIG,
    TrainConfig,
    init_model,
    train,
)
from byteshield.corpus import SynthSpec, generate_corpus  # noqa: E402
from byteshield.evaluation import (  # noqa: E402
    attack_sweep,
    aut,
    build_report,
    compute_metrics,
    temporal_eval,
    write_json_report,
)
from byteshield.masking import DefenseConfig, as_tokens, plan_windows  # noqa: E402
from byteshield.smoothing import make_detector  # noqa: E402
from byteshield.attacks import DonorPool  # noqa: E402

DEFENSES = {
    "none": dict(kind="none", noise="none"),
    "byteshield": dict(kind="byteshield", noise="mask"),
    "drs": dict(kind="drs", noise="chunk"),
    "rsdel": dict(kind="rsdel", noise="delete"),
}


def window_budget_table(length=1_000_000, mask=50):
    print(f"\nvote counts at L={length:,}, mask={mask}%")
    print(f"{'stride %':>10} {'stride bytes':>13} {'nominal':>9} {'votes':>9}")
    for stride in (0.0001, 0.001, 0.01, 0.1, 1, 2, 5):
        plan = plan_windows(length, DefenseConfig(mask, stride, 1))
        print(f"{stride:>10} {plan.stride_len:>13,} {plan.n_nominal:>9,} "
              f"{plan.num_windows:>9,}")


def make_split(args):
    train_spec = SynthSpec(n_benign=args.n_train // 2,
                           n_malicious=args.n_train // 2,
                           min_size=args.min_size, max_size=args.max_size,
                           start_month="2019-09", n_months=1,
                           seed=args.seed)
    test_spec = SynthSpec(n_benign=args.n_test // 2,
                          n_malicious=args.n_test // 2,
                          min_size=args.min_size, max_size=args.max_size,
                          start_month="2019-10", n_months=args.months,
                          drift_per_month=args.drift, seed=args.seed + 1)
    return generate_corpus(train_spec), generate_corpus(test_spec)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--defenses", default="none,byteshield",
                    help=f"comma list from {sorted(DEFENSES)}")
    ap.add_argument("--n-train", type=int, default=160)
    ap.add_argument("--n-test", type=int, default=60)
    ap.add_argument("--min-size", type=int, default=4096)
    ap.add_argument("--max-size", type=int, default=8192)
    ap.add_argument("--months", type=int, default=6)
    ap.add_argument("--drift", type=float, default=0.15)
    ap.add_argument("--preset", choices=["toy", "full"], default="toy")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--mask", type=float, default=50)
    ap.add_argument("--stride", type=float, default=5)
    ap.add_argument("--threshold", type=int, default=2)
    ap.add_argument("--budgets", default="0,1,5,10")
    ap.add_argument("--opt-budget", type=int, default=150)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    chosen = [d.strip() for d in args.defenses.split(",") if d.strip()]
    unknown = set(chosen) - set(DEFENSES)
    if unknown:
        ap.error(f"unknown defenses {sorted(unknown)}")

    window_budget_table()

    t0 = time.time()
    train_samples, test_samples = make_split(args)
    train_x = [as_tokens(s.data) for s in train_samples]
    train_y = [s.label for s in train_samples]
    test_x = [as_tokens(s.data) for s in test_samples]
    test_y = [s.label for s in test_samples]
    donor = DonorPool.from_blobs(
        [s.data for s in train_samples if s.label == 0])
    budgets = [float(b) for b in args.budgets.split(",")]
    preset = TOY_CONFIG if args.preset == "toy" else FULL_CONFIG
    print(f"\ncorpus: {len(train_samples)} train / {len(test_samples)} test "
          f"({time.time() - t0:.1f}s)")

    summary = []
    for name in chosen:
        kind, noise = DEFENSES[name]["kind"], DEFENSES[name]["noise"]
        t0 = time.time()
        model = init_model(preset, seed=args.seed)
        trace = train(model, train_x, train_y,
                      TrainConfig(strategy=noise, mask_percent=args.mask,
                                  epochs=args.epochs,
                                  batch_size=args.batch_size,
                                  seed=args.seed))
        det = make_detector(model, kind, mask_percent=args.mask,
                            stride_percent=args.stride,
                            threshold=args.threshold, seed=args.seed)
        y_pred = [det.predict(x)[0] for x in test_x]
        clean = compute_metrics(test_y, y_pred)

        mal = [s.data for s in test_samples if s.label == 1]
        rows, _ = attack_sweep(mal, det, strategy="padding",
                               budgets=budgets, donor=donor,
                               optimizer_budget=args.opt_budget,
                               seed=args.seed, jobs=args.jobs)
        curve = [r["adversarial_accuracy"] for r in rows]
        months = temporal_eval([s.record() for s in test_samples], y_pred)

        report = build_report(
            dict(defense=name, noise=noise, preset=args.preset,
                 mask=args.mask, stride=args.stride,
                 threshold=args.threshold, budgets=budgets,
                 opt_budget=args.opt_budget, n_train=len(train_samples),
                 n_test=len(test_samples)),
            args.seed, rows, clean_metrics=clean, final_loss=trace[-1],
            aut_adversarial_accuracy=aut(curve), temporal=months)
        write_json_report(report, out_dir / f"{name}.json")
        summary.append((name, clean["f1"], curve, aut(curve)))
        print(f"{name}: trained {args.epochs} epochs "
              f"(loss {trace[0]:.3f} -> {trace[-1]:.3f}), "
              f"clean f1 {clean['f1']:.3f} ({time.time() - t0:.1f}s)")

    print(f"\n{'defense':>12} {'clean f1':>9} "
          + " ".join(f"acc@{b:g}%".rjust(9) for b in budgets)
          + " {:>7}".format("AUT"))
    for name, f1, curve, area in summary:
        print(f"{name:>12} {f1:>9.3f} "
              + " ".join(f"{v:>9.3f}" for v in curve) + f" {area:>7.3f}")
    print(f"\nmonthly accuracy on the drifted window (drift/month="
          f"{args.drift}):")
    for name in chosen:
        import json
        rep = json.loads((out_dir / f"{name}.json").read_text())
        cells = " ".join(f"{row['month']}:{row['accuracy']:.2f}"
                         for row in rep["temporal"]["rows"])
        print(f"{name:>12} {cells}")
    print(f"\nreports under {out_dir}/")


if __name__ == "__main__":
    main()
