"""Detection metrics, robustness curves, attack sweeps, and temporal
evaluation over month buckets.

Adversarial accuracy at a byte budget is the fraction of initially detected
malicious files still detected after an attack at that budget; budget zero
is the clean detection rate.  The area-under-the-curve summary (aut) is the
trapezoidal mean of a metric sampled along the budget grid.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence

import numpy as np

from .attacks import AttackSpec, AttackResult, DonorPool, NotDetectedError, run_attack
from .corpus import ManifestRecord, atomic_write_text, month_of, month_span
from .masking import as_tokens


def compute_metrics(y_true: Sequence, y_pred: Sequence) -> Dict[str, float]:
    """Confusion counts plus the usual derived rates; degenerate denominators
    yield 0 rather than NaN."""
    yt = np.asarray(y_true, dtype=bool)
    yp = np.asarray(y_pred, dtype=bool)
    if yt.shape != yp.shape:
        raise ValueError(f"label shapes differ: {yt.shape} vs {yp.shape}")
    tp = int(np.sum(yt & yp))
    fp = int(np.sum(~yt & yp))
    fn = int(np.sum(yt & ~yp))
    tn = int(np.sum(~yt & ~yp))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    f1 = 2 * precision * recall / (precision + recall) \
        if precision + recall else 0.0
    n = tp + fp + fn + tn
    accuracy = (tp + tn) / n if n else 0.0
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "precision": precision, "recall": recall, "tpr": recall,
            "fpr": fpr, "f1": f1, "accuracy": accuracy}


def aut(values: Sequence[float]) -> float:
    """Trapezoidal mean of a curve sampled at evenly spaced points:
    (1/(n-1)) * sum of (f_k + f_{k+1})/2.  A single sample is its own mean."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("aut needs at least one value")
    if len(vals) == 1:
        return vals[0]
    n = len(vals)
    return sum((vals[k] + vals[k + 1]) / 2 for k in range(n - 1)) / (n - 1)


def _per_sample_seed(seed: int, index: int, budget: float) -> int:
    ss = np.random.SeedSequence([seed, index, int(round(budget * 1000))])
    return int(ss.generate_state(1)[0])


def attack_sweep(samples: Sequence[bytes], detector, *, strategy: str,
                 budgets: Sequence[float], init: str = "benign",
                 optimizer_budget: int = 3000,
                 donor: Optional[DonorPool] = None, seed: int = 0,
                 max_new_sections: int = 5, run_to_budget: bool = False,
                 jobs: int = 1) -> tuple:
    """Attack every sample at every non-zero budget.

    Returns (rows, results) where rows carry one dict per budget and results
    maps budget -> list of AttackResult for the samples that were attacked.
    Samples the detector already missed are excluded from the denominator
    and counted in n_excluded; budget 0 reports the clean detection rate.
    Per-sample seeds are derived from (seed, index, budget), so results do
    not depend on the worker count.
    """
    rows: List[dict] = []
    results: Dict[float, List[AttackResult]] = {}
    for budget in budgets:
        b = float(budget)
        if b == 0.0:
            detected = [detector.predict(as_tokens(blob))[0]
                        for blob in samples]
            rows.append({"budget_percent": 0.0, "n_samples": len(samples),
                         "n_excluded": 0,
                         "n_evaded": int(sum(not d for d in detected)),
                         "adversarial_accuracy":
                             float(np.mean(detected)) if samples else 0.0,
                         "mean_queries": 0.0})
            results[b] = []
            continue
        def one(idx_blob):
            idx, blob = idx_blob
            spec = AttackSpec(strategy=strategy, budget_percent=b, init=init,
                              optimizer_budget=optimizer_budget,
                              max_new_sections=max_new_sections,
                              seed=_per_sample_seed(seed, idx, b))
            try:
                return run_attack(blob, detector, spec, donor=donor,
                                  sample_id=f"sample_{idx:05d}",
                                  run_to_budget=run_to_budget)
            except NotDetectedError:
                return None

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(one, enumerate(samples)))
        else:
            outcomes = [one(pair) for pair in enumerate(samples)]
        attacked = [r for r in outcomes if r is not None]
        excluded = sum(r is None for r in outcomes)
        n = len(attacked)
        n_evaded = sum(r.evaded for r in attacked)
        rows.append({"budget_percent": b, "n_samples": n,
                     "n_excluded": excluded, "n_evaded": int(n_evaded),
                     "adversarial_accuracy":
                         (n - n_evaded) / n if n else 0.0,
                     "mean_queries":
                         float(np.mean([r.queries for r in attacked]))
                         if attacked else 0.0})
        results[b] = attacked
    return rows, results


def temporal_eval(records: Sequence[ManifestRecord],
                  y_pred: Sequence) -> dict:
    """Metrics per month bucket across the full span of the records; months
    inside the span with no samples are listed as skipped."""
    if len(records) != len(y_pred):
        raise ValueError(f"{len(records)} records vs {len(y_pred)} predictions")
    if not records:
        raise ValueError("temporal evaluation needs at least one record")
    month_idx: Dict[str, List[int]] = {}
    for i, r in enumerate(records):
        month_idx.setdefault(month_of(r.timestamp), []).append(i)
    present = sorted(month_idx)
    full = month_span(present[0], present[-1])
    skipped = [m for m in full if m not in month_idx]
    rows = []
    for m in full:
        idx = month_idx.get(m)
        if not idx:
            continue
        metrics = compute_metrics([records[i].label for i in idx],
                                  [y_pred[i] for i in idx])
        rows.append({"month": m, "n_samples": len(idx), **metrics})
    return {"months": full, "skipped": skipped, "rows": rows}


# ---------------------------------------------------------------------- #
# report writers                                                         #
# ---------------------------------------------------------------------- #

def build_report(config: dict, seed, rows: Sequence[dict], **extra) -> dict:
    """Standard report envelope: every saved result echoes the settings and
    seed that produced it."""
    report = {"config": dict(config), "seed": seed, "rows": list(rows)}
    report.update(extra)
    return report


def write_json_report(report: dict, path) -> None:
    atomic_write_text(path, json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_csv_rows(rows: Sequence[dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    header = list(rows[0].keys())
    for r in rows:
        if list(r.keys()) != header:
            raise ValueError("rows must share one column set")
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(r[k]) for k in header))
    atomic_write_text(path, "\n".join(lines) + "\n")
