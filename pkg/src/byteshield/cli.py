"""Command-line interface.

Subcommands
-----------
- ``gen-corpus``: write a synthetic PE corpus with a CSV manifest
- ``train``: train the gated-conv byte classifier, noise matched to defense
- ``predict``: label files or a manifest under a chosen defense
- ``attack``: black-box evasion attacks against detected files
- ``evaluate``: clean metrics plus a budget sweep, JSON/CSV reports
- ``temporal-eval``: per-month metric buckets from manifest timestamps
- ``certify``: exhaustive mask-position check for a single file

Exit codes: 0 on success, 1 for operational errors (missing or malformed
inputs, model/image format problems), 2 for usage errors (bad flags or bad
configuration values).

Settings resolve as: command-line flag, then --config JSON entry, then the
BYTESHIELD_SEED environment variable (seed only), then built-in defaults.
Outputs are written atomically (temp file in the target directory, then
rename), so a crash never leaves a half-written artifact.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .attacks import (
    AttackSpec,
    DonorPool,
    NotDetectedError,
    run_attack,
)
from .classifier import (
    FULL_CONFIG,
    TOY_CONFIG,
    TrainConfig,
    init_model,
    load_model,
    model_to_bytes,
    train,
)
from .corpus import (
    SynthSpec,
    atomic_write_text,
    generate_corpus,
    load_samples,
    write_corpus,
)
from .evaluation import (
    _per_sample_seed,
    attack_sweep,
    aut,
    build_report,
    compute_metrics,
    temporal_eval,
    write_csv_rows,
    write_json_report,
)
from .masking import DefenseConfig, as_tokens, mask_len_bytes
from .smoothing import certify_exhaustive, make_detector

ENV_SEED = "BYTESHIELD_SEED"
CERTIFY_SIZE_CAP = 131072

_NOISE_FOR_DEFENSE = {"none": "none", "byteshield": "mask", "drs": "chunk",
                      "rsdel": "delete"}

_DEFAULTS = {
    "defense": "none", "mask": 50.0, "stride": 1.0, "threshold": 1,
    "chunks": 10, "pdel": 0.97, "nsamples": 100,
    "strategy": "padding", "budget_percent": 10.0, "init": "benign",
    "opt_budget": 3000, "max_new_sections": 5,
    "jobs": 1, "preset": "toy", "epochs": 8, "batch_size": 32,
    "lr": 0.1, "momentum": 0.9,
    "n_benign": 100, "n_malicious": 100, "min_size": 4096,
    "max_size": 16384, "start_month": "2019-09", "months": 13,
    "drift": 0.0, "budgets": "0,1,2,5,10",
}


class UsageError(Exception):
    """Bad flag or configuration value (exit code 2)."""


def _usage(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path}: top level must be an object")
    unknown = set(cfg) - set(_DEFAULTS) - {"seed"}
    if unknown:
        raise UsageError(f"config {path}: unknown keys {sorted(unknown)}")
    return cfg


def _get(ns, key):
    """Flag > config file > (env for seed) > default."""
    val = getattr(ns, key, None)
    if val is not None:
        return val
    if key in ns.config_values:
        return ns.config_values[key]
    if key == "seed":
        env = os.environ.get(ENV_SEED)
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise UsageError(f"{ENV_SEED} must be an integer, got {env!r}")
        return 0
    return _DEFAULTS[key]


def _atomic_write_bytes(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(ns, text: str):
    out = getattr(ns, "out", None)
    if out:
        atomic_write_text(out, text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _detector(ns, model):
    return _usage(make_detector, model, _get(ns, "defense"),
                  mask_percent=_get(ns, "mask"),
                  stride_percent=_get(ns, "stride"),
                  threshold=int(_get(ns, "threshold")),
                  num_chunks=int(_get(ns, "chunks")),
                  delete_prob=float(_get(ns, "pdel")),
                  num_samples=int(_get(ns, "nsamples")),
                  seed=int(_get(ns, "seed")))


def _defense_echo(ns) -> dict:
    return {"defense": _get(ns, "defense"), "mask": float(_get(ns, "mask")),
            "stride": float(_get(ns, "stride")),
            "threshold": int(_get(ns, "threshold")),
            "chunks": int(_get(ns, "chunks")),
            "pdel": float(_get(ns, "pdel")),
            "nsamples": int(_get(ns, "nsamples"))}


def _read_inputs(ns):
    """(sample_id, bytes, record-or-None) triples from --manifest plus any
    positional files."""
    items = []
    if getattr(ns, "manifest", None):
        for blob, rec in load_samples(ns.manifest):
            items.append((rec.path, blob, rec))
    for f in getattr(ns, "files", None) or []:
        items.append((f, Path(f).read_bytes(), None))
    if not items:
        raise UsageError("no inputs: pass --manifest and/or file paths")
    return items


# ---------------------------------------------------------------------- #
# subcommands                                                            #
# ---------------------------------------------------------------------- #

def cmd_gen_corpus(ns) -> int:
    spec = _usage(SynthSpec,
                  n_benign=int(_get(ns, "n_benign")),
                  n_malicious=int(_get(ns, "n_malicious")),
                  min_size=int(_get(ns, "min_size")),
                  max_size=int(_get(ns, "max_size")),
                  start_month=_get(ns, "start_month"),
                  n_months=int(_get(ns, "months")),
                  drift_per_month=float(_get(ns, "drift")),
                  seed=int(_get(ns, "seed")))
    samples = generate_corpus(spec)
    manifest = write_corpus(samples, ns.out)
    print(f"wrote {len(samples)} files under {ns.out} (manifest {manifest})")
    return 0


def cmd_train(ns) -> int:
    preset = {"toy": TOY_CONFIG, "full": FULL_CONFIG}[_get(ns, "preset")]
    seed = int(_get(ns, "seed"))
    noise = _NOISE_FOR_DEFENSE[_get(ns, "defense")]
    cfg = _usage(TrainConfig, strategy=noise,
                 mask_percent=_get(ns, "mask"),
                 delete_prob=float(_get(ns, "pdel")),
                 chunk_count=int(_get(ns, "chunks")),
                 epochs=int(_get(ns, "epochs")),
                 batch_size=int(_get(ns, "batch_size")),
                 learning_rate=float(_get(ns, "lr")),
                 momentum=float(_get(ns, "momentum")), seed=seed)
    pairs = load_samples(ns.manifest)
    sequences = [as_tokens(blob) for blob, _ in pairs]
    labels = [rec.label for _, rec in pairs]
    model = init_model(preset, seed=seed)
    trace = train(model, sequences, labels, cfg)
    _atomic_write_bytes(ns.out, model_to_bytes(model))
    losses = " ".join(f"{v:.4f}" for v in trace)
    print(f"trained on {len(pairs)} files ({noise} noise), "
          f"epoch losses: {losses}")
    print(f"saved model to {ns.out}")
    return 0


def cmd_predict(ns) -> int:
    model = load_model(ns.model)
    det = _detector(ns, model)
    items = _read_inputs(ns)
    lines = []
    for sample_id, blob, _rec in items:
        label, tally = det.predict(as_tokens(blob))
        verdict = "malicious" if label else "benign"
        if ns.explain:
            row = {"path": sample_id, "label": verdict,
                   "num_votes": det.num_votes(len(blob)),
                   "benign_threshold": det.benign_threshold(len(blob))}
            if tally is not None:
                row["tally"] = tally.as_dict()
            else:
                row["score"] = float(model.score(as_tokens(blob)))
            lines.append(json.dumps(row, sort_keys=True))
        else:
            lines.append(f"{sample_id}\t{verdict}")
    _emit(ns, "\n".join(lines))
    return 0


def _donor_pool(ns, items):
    donor_manifest = getattr(ns, "donor_manifest", None)
    if donor_manifest:
        return DonorPool.from_blobs(
            [blob for blob, rec in load_samples(donor_manifest)
             if rec.label == 0])
    benign = [blob for _sid, blob, rec in items
              if rec is not None and rec.label == 0]
    if benign:
        return DonorPool.from_blobs(benign)
    return None


def cmd_attack(ns) -> int:
    model = load_model(ns.model)
    det = _detector(ns, model)
    items = _read_inputs(ns)
    donor = _donor_pool(ns, items)
    targets = [(sid, blob) for sid, blob, rec in items
               if rec is None or rec.label == 1]
    if not targets:
        raise UsageError("no malicious inputs to attack")
    strict = all(rec is None for _s, _b, rec in items)  # explicit file list
    seed = int(_get(ns, "seed"))
    base = dict(strategy=_get(ns, "strategy"),
                budget_percent=float(_get(ns, "budget_percent")),
                init=_get(ns, "init"),
                optimizer_budget=int(_get(ns, "opt_budget")),
                max_new_sections=int(_get(ns, "max_new_sections")))

    def one(idx_target):
        idx, (sid, blob) = idx_target
        spec = _usage(AttackSpec, seed=_per_sample_seed(
            seed, idx, base["budget_percent"]), **base)
        try:
            return run_attack(blob, det, spec, donor=donor, sample_id=sid,
                              run_to_budget=ns.run_to_budget)
        except NotDetectedError:
            if strict:
                raise
            return None

    jobs = int(_get(ns, "jobs"))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, enumerate(targets)))
    else:
        outcomes = [one(pair) for pair in enumerate(targets)]
    results = [r for r in outcomes if r is not None]
    skipped = sum(r is None for r in outcomes)

    if ns.save_attacked:
        out_dir = Path(ns.save_attacked)
        out_dir.mkdir(parents=True, exist_ok=True)
        for r in results:
            name = Path(r.sample_id).name or "sample.bin"
            _atomic_write_bytes(out_dir / f"attacked_{name}", r.attacked)

    _emit(ns, "\n".join(json.dumps(r.record()) for r in results))
    evaded = sum(r.evaded for r in results)
    print(f"attacked {len(results)}, evaded {evaded}, "
          f"skipped {skipped} undetected", file=sys.stderr)
    return 0


def cmd_evaluate(ns) -> int:
    model = load_model(ns.model)
    det = _detector(ns, model)
    items = _read_inputs(ns)
    donor = _donor_pool(ns, items)
    try:
        budgets = [float(b) for b in str(_get(ns, "budgets")).split(",") if b]
    except ValueError as exc:
        raise UsageError(f"--budgets must be comma-separated numbers: {exc}")
    if not budgets:
        raise UsageError("--budgets must name at least one budget")

    y_true = [rec.label if rec else 1 for _sid, _blob, rec in items]
    y_pred = [det.predict(as_tokens(blob))[0] for _sid, blob, _rec in items]
    clean = compute_metrics(y_true, y_pred)

    mal = [blob for _sid, blob, rec in items if rec is None or rec.label == 1]
    rows, _results = attack_sweep(
        mal, det, strategy=_get(ns, "strategy"), budgets=budgets,
        init=_get(ns, "init"), optimizer_budget=int(_get(ns, "opt_budget")),
        donor=donor, seed=int(_get(ns, "seed")),
        max_new_sections=int(_get(ns, "max_new_sections")),
        jobs=int(_get(ns, "jobs")))
    curve = [r["adversarial_accuracy"] for r in rows]
    config = {**_defense_echo(ns), "strategy": _get(ns, "strategy"),
              "init": _get(ns, "init"),
              "opt_budget": int(_get(ns, "opt_budget")),
              "budgets": budgets, "model": str(ns.model)}
    report = build_report(config, int(_get(ns, "seed")), rows,
                          clean_metrics=clean,
                          aut_adversarial_accuracy=aut(curve))
    write_json_report(report, ns.out)
    if ns.csv:
        write_csv_rows(rows, ns.csv)
    print(f"clean f1 {clean['f1']:.4f}, "
          f"aut(adversarial accuracy) {report['aut_adversarial_accuracy']:.4f}, "
          f"report {ns.out}")
    return 0


def cmd_temporal_eval(ns) -> int:
    model = load_model(ns.model)
    det = _detector(ns, model)
    pairs = load_samples(ns.manifest)
    records = [rec for _blob, rec in pairs]
    y_pred = [det.predict(as_tokens(blob))[0] for blob, _rec in pairs]
    buckets = temporal_eval(records, y_pred)
    config = {**_defense_echo(ns), "model": str(ns.model),
              "manifest": str(ns.manifest)}
    report = build_report(config, int(_get(ns, "seed")), buckets["rows"],
                          months=buckets["months"],
                          skipped=buckets["skipped"])
    write_json_report(report, ns.out)
    if ns.csv:
        write_csv_rows(buckets["rows"], ns.csv)
    print(f"evaluated {len(buckets['rows'])} months "
          f"({len(buckets['skipped'])} skipped), report {ns.out}")
    return 0


def cmd_certify(ns) -> int:
    model = load_model(ns.model)
    blob = Path(ns.file).read_bytes()
    if len(blob) > CERTIFY_SIZE_CAP and not ns.force:
        raise UsageError(
            f"{ns.file} is {len(blob)} bytes; exhaustive certification above "
            f"{CERTIFY_SIZE_CAP} is expensive, pass --force to run anyway")
    mask_len = _usage(mask_len_bytes, len(blob), _get(ns, "mask"))
    result = certify_exhaustive(model, as_tokens(blob), mask_len)
    payload = {"path": ns.file, "mask_percent": float(_get(ns, "mask")),
               "mask_len": mask_len, "unanimous": result.unanimous,
               "label": (None if result.label is None
                         else ("malicious" if result.label else "benign")),
               "num_malicious": result.num_malicious,
               "num_versions": result.num_versions}
    _emit(ns, json.dumps(payload, sort_keys=True))
    return 0


# ---------------------------------------------------------------------- #
# parser                                                                 #
# ---------------------------------------------------------------------- #

def _add_common(p):
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--json-errors", action="store_true",
                   help="report errors as JSON on stderr")
    p.add_argument("--seed", type=int, default=None)


def _add_defense(p):
    p.add_argument("--defense",
                   choices=["none", "byteshield", "drs", "rsdel"],
                   default=None)
    p.add_argument("--mask", type=float, default=None,
                   help="mask length, percent of file size")
    p.add_argument("--stride", type=float, default=None,
                   help="window stride, percent of file size")
    p.add_argument("--threshold", type=int, default=None,
                   help="malicious votes needed for a malicious verdict")
    p.add_argument("--chunks", type=int, default=None,
                   help="chunk count for the drs defense")
    p.add_argument("--pdel", type=float, default=None,
                   help="deletion probability for the rsdel defense")
    p.add_argument("--nsamples", type=int, default=None,
                   help="deletion samples for the rsdel defense")


def _add_attack_flags(p):
    p.add_argument("--strategy",
                   choices=["padding", "shift", "code_caves",
                            "section_injection"], default=None)
    p.add_argument("--init", choices=["benign", "random", "zeros"],
                   default=None)
    p.add_argument("--opt-budget", type=int, default=None, dest="opt_budget")
    p.add_argument("--max-new-sections", type=int, default=None,
                   dest="max_new_sections")
    p.add_argument("--donor-manifest", default=None, dest="donor_manifest",
                   help="manifest whose benign files seed payloads")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--run-to-budget", action="store_true",
                   dest="run_to_budget",
                   help="spend the full query budget, no early exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="byteshield",
        description="Smoothed byte-level malware detection and attacks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic PE corpus")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-benign", type=int, default=None, dest="n_benign")
    p.add_argument("--n-malicious", type=int, default=None,
                   dest="n_malicious")
    p.add_argument("--min-size", type=int, default=None, dest="min_size")
    p.add_argument("--max-size", type=int, default=None, dest="max_size")
    p.add_argument("--start-month", default=None, dest="start_month")
    p.add_argument("--months", type=int, default=None)
    p.add_argument("--drift", type=float, default=None,
                   help="drifted fraction added per month index")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train the byte classifier")
    _add_common(p)
    _add_defense(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--preset", choices=["toy", "full"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label files under a defense")
    _add_common(p)
    _add_defense(p)
    p.add_argument("--model", required=True)
    p.add_argument("--manifest")
    p.add_argument("files", nargs="*")
    p.add_argument("--out", help="write results here instead of stdout")
    p.add_argument("--explain", action="store_true",
                   help="emit JSON rows with the full vote tally")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("attack", help="evade the detector on given files")
    _add_common(p)
    _add_defense(p)
    _add_attack_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", help="attack its malicious files")
    p.add_argument("files", nargs="*")
    p.add_argument("--budget-percent", type=float, default=None,
                   dest="budget_percent")
    p.add_argument("--out", help="JSON-lines results file")
    p.add_argument("--save-attacked", default=None, dest="save_attacked",
                   help="directory for attacked binaries")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate",
                       help="clean metrics and a budget sweep")
    _add_common(p)
    _add_defense(p)
    _add_attack_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--budgets", default=None,
                   help="comma-separated budget percents, 0 = clean")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--csv", default=None, help="also write rows as CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("temporal-eval", help="metrics per month bucket")
    _add_common(p)
    _add_defense(p)
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_temporal_eval)

    p = sub.add_parser("certify",
                       help="exhaustive mask-position certification")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--mask", type=float, default=None)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true",
                   help="certify files above the size cap")
    p.add_argument("file")
    p.set_defaults(func=cmd_certify)

    return parser


def _report_error(ns, exc) -> None:
    msg = str(exc)
    if getattr(ns, "json_errors", False):
        print(json.dumps({"error": msg, "type": type(exc).__name__}),
              file=sys.stderr)
    else:
        print(f"error: {msg}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        ns.config_values = _load_config(ns.config)
        return ns.func(ns)
    except UsageError as exc:
        _report_error(ns, exc)
        return 2
    except (OSError, ValueError, NotDetectedError, KeyError) as exc:
        _report_error(ns, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
