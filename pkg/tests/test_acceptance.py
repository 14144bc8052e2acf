"""Acceptance gate: twelve end-to-end checks covering window planning,
exhaustive certification, masked training dynamics, black-box attacks, and
reporting.  Each check prints one PASS/FAIL line with its measured
quantities; tolerances are pinned in the asserts."""

import math
import time

import numpy as np
import pytest

from byteshield.attacks import (
    AttackSpec,
    DonorPool,
    build_payload_slots,
    init_payload,
    run_attack,
)
from byteshield.classifier import (
    FunctionClassifier,
    PatternOracle,
    TOY_CONFIG,
    TrainConfig,
    init_model,
    train,
)
from byteshield.corpus import SynthSpec, generate_corpus
from byteshield.evaluation import attack_sweep, aut, compute_metrics
from byteshield.masking import DefenseConfig, as_tokens, plan_windows
from byteshield.pe import parse_pe, serialize_pe
from byteshield.smoothing import (
    CountingClassifier,
    byteshield_predict,
    certify_exhaustive,
    make_detector,
)

FIXTURES = ("two_sections.bin", "gapped.bin", "overlay.bin", "packed.bin")


def _report(num: int, name: str, ok: bool, detail: str = ""):
    line = f"[check {num:02d}] {'PASS' if ok else 'FAIL'} {name}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def fixture_blobs():
    import pathlib
    root = pathlib.Path(__file__).parent / "fixtures"
    return {name: (root / name).read_bytes() for name in FIXTURES}


@pytest.fixture(scope="module")
def synth():
    """Shared train/test split (2,000 train and 400 test files, 4-16 KB)
    plus 50 malicious attack samples capped at 8 KB so a 10 percent padding
    payload always stays inside the model's input length."""
    t0 = time.perf_counter()
    train_s = generate_corpus(SynthSpec(
        n_benign=1000, n_malicious=1000, min_size=4096, max_size=16384,
        start_month="2019-09", n_months=1, seed=11))
    test_s = generate_corpus(SynthSpec(
        n_benign=200, n_malicious=200, min_size=4096, max_size=16384,
        start_month="2019-09", n_months=1, seed=12))
    attack_s = generate_corpus(SynthSpec(
        n_benign=0, n_malicious=50, min_size=4096, max_size=8192,
        start_month="2019-09", n_months=1, seed=13))
    return {"train": train_s, "test": test_s, "attack": attack_s,
            "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def trained(synth):
    """Toy model trained with mask-window noise at M=50 on the shared split."""
    t0 = time.perf_counter()
    model = init_model(TOY_CONFIG, seed=0)
    losses = train(model,
                   [s.data for s in synth["train"]],
                   np.array([s.label for s in synth["train"]]),
                   TrainConfig(strategy="mask", mask_percent=50, epochs=8,
                               batch_size=32, seed=0))
    return {"model": model, "losses": losses,
            "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def donors():
    """Benign-only donor corpus without planted signatures."""
    files = generate_corpus(SynthSpec(
        n_benign=60, n_malicious=0, min_size=4096, max_size=16384,
        n_months=1, benign_sig_fraction=0.0, seed=77))
    return DonorPool.from_blobs([s.data for s in files])


def test_01_window_plan_table():
    t0 = time.perf_counter()
    expected = [  # (stride percent, stride bytes, nominal window count)
        (0.0001, 1, 500_000),
        (0.001, 10, 50_000),
        (0.01, 100, 5_000),
        (0.1, 1_000, 500),
        (1, 10_000, 50),
        (2, 20_000, 25),
        (5, 50_000, 10),
    ]
    for stride, stride_bytes, nominal in expected:
        plan = plan_windows(1_000_000, DefenseConfig(50, stride, 1))
        assert plan.mask_len == 500_000
        assert plan.stride_len == stride_bytes, (stride, plan.stride_len)
        assert plan.n_nominal == nominal, (stride, plan.n_nominal)
    dt = time.perf_counter() - t0
    _report(1, "window plan table, seven stride rows exact", dt < 1.0,
            f"{dt:.3f}s < 1s, zero tolerance")


def test_02_exhaustive_certification_disagrees_on_decoys():
    # Constructed corpus: a 3-byte signature at offset 0, one contiguous
    # decoy run of length p placed anywhere after it, neutral filler
    # elsewhere.  For every length, decoy size up to the mask length, and
    # placement, some mask keeps the signature while hiding the decoy and
    # some mask hides the signature, so no certificate may be issued.
    # Lengths below 6 admit no placement and contribute no cases.
    sig = bytes([0xAA, 0xBB, 0xCC])
    t0 = time.perf_counter()
    cases = 0
    for length in range(6, 201):
        m = -(-length // 2)
        base = np.full(length, 0x11, dtype=np.int32)
        base[0:3] = [0xAA, 0xBB, 0xCC]
        for p in range(1, m + 1):
            oracle = PatternOracle(sig, bytes([0xDD]) * p)
            for c in range(3, length - p + 1):
                blob = base.copy()
                blob[c:c + p] = 0xDD
                res = certify_exhaustive(oracle, blob, m)
                assert not res.unanimous, (length, p, c)
                cases += 1
    dt = time.perf_counter() - t0
    _report(2, "exhaustive certification reports disagreement", dt < 120.0,
            f"{cases} cases, zero failures, {dt:.1f}s < 120s")


def test_03_window_union_covers_every_byte():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        length = int(rng.integers(1, 10_001))
        mask = float(rng.uniform(1.0, 99.9))
        stride = float(rng.uniform(1.0, mask)) if mask > 1.0 else 0.5
        plan = plan_windows(length, DefenseConfig(mask, stride, 1))
        covered = np.zeros(length, dtype=bool)
        for a in plan.starts:
            covered[a:a + plan.mask_len] = True
        assert covered.all(), (length, mask, stride)
    _report(3, "window union covers [0, L) on 1000 random triples", True,
            "brute-force bitmap, zero failures")


def test_04_high_threshold_blinds_the_vote(synth, trained):
    cfg = DefenseConfig(mask_percent=50, stride_percent=5, threshold=12)
    corpus = ([s for s in synth["test"] if not s.label][:50]
              + [s for s in synth["test"] if s.label][:50])
    assert len(corpus) == 100
    positives = 0
    for s in corpus:
        label, tally = byteshield_predict(trained["model"],
                                          as_tokens(s.data), cfg)
        assert tally.num_versions <= 11
        positives += bool(label)
    _report(4, "M=50 S=5 T=12 labels every input benign", positives == 0,
            "100-file corpus, TPR = 0 and FPR = 0")


def test_05_analytic_gradients_match_finite_differences():
    model = init_model(TOY_CONFIG, seed=3, dtype=np.float64)
    rng = np.random.default_rng(5)
    worst = 0.0
    for trial in range(20):
        x = rng.integers(0, 257, int(rng.integers(9, 41))).astype(np.int32)
        y = np.array([float(trial % 2)])
        padded = model._pad_batch([x])
        _, grads = model.loss_and_grads(padded, y)
        for name, arr in model.params.items():
            flat = arr.reshape(-1)
            g = grads[name].reshape(-1)
            for i in range(flat.size):
                h = 1e-4 * (1.0 + abs(flat[i]))
                orig = flat[i]
                flat[i] = orig + h
                lp = model.loss_and_grads(padded, y)[0]
                flat[i] = orig - h
                lm = model.loss_and_grads(padded, y)[0]
                flat[i] = orig
                fd = (lp - lm) / (2.0 * h)
                rel = abs(fd - g[i]) / max(1e-8, abs(fd) + abs(g[i]))
                assert rel < 1e-4, (name, i, fd, g[i])
                worst = max(worst, rel)
    _report(5, "all parameter gradients match central differences", True,
            f"20 random inputs, worst relative error {worst:.2e} < 1e-4")


def test_06_pad_embedding_row_stays_zero(synth):
    model = init_model(TOY_CONFIG, seed=9)
    train(model,
          [s.data for s in synth["train"]],
          np.array([s.label for s in synth["train"]]),
          TrainConfig(strategy="mask", mask_percent=50, epochs=3,
                      batch_size=32, seed=9))
    row = model.params["embedding"][256]
    ok = bool(np.all(row == 0.0))
    _report(6, "embedding row 256 exactly zero after 3 epochs", ok,
            f"max |row| = {np.abs(row).max():.1e}")


def test_07_masked_training_preserves_clean_f1(synth, trained):
    t0 = time.perf_counter()
    plain = make_detector(trained["model"], kind="none")
    shield = make_detector(trained["model"], kind="byteshield",
                           mask_percent=50, stride_percent=1, threshold=2)
    y_true = np.array([s.label for s in synth["test"]])
    f1_plain = compute_metrics(
        y_true, [plain.predict(s.data)[0] for s in synth["test"]])["f1"]
    f1_shield = compute_metrics(
        y_true, [shield.predict(s.data)[0] for s in synth["test"]])["f1"]
    elapsed = (synth["seconds"] + trained["seconds"]
               + time.perf_counter() - t0)
    ok = f1_plain >= 0.95 and abs(f1_plain - f1_shield) <= 0.03
    _report(7, "masked training clean F1", ok and elapsed < 600.0,
            f"plain {f1_plain:.4f} >= 0.95, vote {f1_shield:.4f} within "
            f"0.03, {elapsed:.0f}s < 600s")


def test_08_padding_attack_beats_plain_model_not_the_vote(synth, trained,
                                                          donors):
    t0 = time.perf_counter()
    plain = make_detector(trained["model"], kind="none")
    shield = make_detector(trained["model"], kind="byteshield",
                           mask_percent=50, stride_percent=1, threshold=2)
    samples = [s.data for s in synth["attack"]]
    assert len(samples) == 50

    rows, _ = attack_sweep(samples, plain, strategy="padding",
                           budgets=(0.0, 1.0, 2.0, 5.0, 10.0), init="benign",
                           optimizer_budget=3000, donor=donors, seed=0)
    accs = [r["adversarial_accuracy"] for r in rows]
    assert all(r["n_excluded"] == 0 for r in rows[1:])
    monotone = all(a >= b - 1e-12 for a, b in zip(accs, accs[1:]))
    evasion_plain = rows[-1]["n_evaded"] / rows[-1]["n_samples"]

    shield_rows, _ = attack_sweep(samples, shield, strategy="padding",
                                  budgets=(10.0,), init="benign",
                                  optimizer_budget=3000, donor=donors, seed=0)
    assert shield_rows[0]["n_excluded"] == 0
    evasion_shield = (shield_rows[0]["n_evaded"]
                      / shield_rows[0]["n_samples"])
    dt = time.perf_counter() - t0
    ok = (evasion_plain >= 0.80
          and evasion_plain - evasion_shield >= 0.30
          and monotone and dt < 1800.0)
    _report(8, "padding attack at 10 percent, 3000 queries", ok,
            f"plain evasion {evasion_plain:.0%} >= 80%, vote evasion "
            f"{evasion_shield:.0%} at least 30 points lower, adversarial "
            f"accuracy non-increasing over budgets {accs}, {dt:.0f}s < 1800s")


def test_09_benign_init_starts_no_higher_than_zeros(synth, trained, donors):
    plain = make_detector(trained["model"], kind="none")
    samples = [s.data for s in synth["attack"]]
    mean = {}
    for mode in ("benign", "zeros"):
        scores = []
        for i, blob in enumerate(samples):
            layout = build_payload_slots(
                blob, AttackSpec("padding", 10.0, mode, 3000, seed=i))
            payload = init_payload(layout.payload_len, mode,
                                   np.random.default_rng(i), donors)
            scores.append(plain.objective(layout.apply(payload)))
        mean[mode] = float(np.mean(scores))
    ok = mean["benign"] <= mean["zeros"]
    _report(9, "benign-init initial score <= zeros-init", ok,
            f"means {mean['benign']:.4f} vs {mean['zeros']:.4f}, "
            "50 samples, directional")


def test_10_round_trip_and_diff_containment(fixture_blobs):
    for name, blob in fixture_blobs.items():
        assert serialize_pe(parse_pe(blob)) == blob, name

    detector = make_detector(FunctionClassifier(lambda x: 0.9), kind="none")
    donor = DonorPool.from_blobs(list(fixture_blobs.values()))
    rng = np.random.default_rng(10)
    strategies = ("padding", "shift", "code_caves", "section_injection")
    names = list(fixture_blobs)
    for run in range(500):
        blob = fixture_blobs[names[int(rng.integers(len(names)))]]
        spec = AttackSpec(
            strategy=strategies[int(rng.integers(4))],
            budget_percent=float(rng.uniform(1.0, 20.0)),
            init=("benign", "random", "zeros")[int(rng.integers(3))],
            optimizer_budget=4,
            max_new_sections=int(rng.integers(1, 6)),
            seed=int(rng.integers(1 << 31)))
        result = run_attack(blob, detector, spec, donor=donor)
        parse_pe(result.attacked)
        baseline = build_payload_slots(blob, spec)
        a = np.frombuffer(result.attacked, dtype=np.uint8)
        b = np.frombuffer(baseline.data, dtype=np.uint8)
        assert a.size == b.size
        outside = np.ones(a.size, dtype=bool)
        outside[baseline.slot_indices()] = False
        assert not (a[outside] != b[outside]).any(), (spec.strategy, run)
    _report(10, "fixtures round-trip bit-exact; 500 attack runs re-parse "
            "with diffs confined to payload slots", True)


def test_11_curve_mean_and_confusion_matrix_oracles():
    assert abs(aut([0.9] * 5) - 0.9) <= 1e-12
    assert abs(aut([0.8, 1.0]) - 0.9) <= 1e-12
    assert abs(aut([1.0, 0.5, 0.0]) - 0.5) <= 1e-12
    m = compute_metrics([1, 1, 1, 1, 0, 0, 0, 0, 0, 0],
                        [1, 1, 1, 0, 1, 0, 0, 0, 0, 0])
    assert (m["tp"], m["fp"], m["fn"], m["tn"]) == (3, 1, 1, 5)
    assert m["precision"] == 0.75 and m["recall"] == 0.75
    assert m["f1"] == 0.75 and m["accuracy"] == 0.8
    _report(11, "curve-mean examples at 1e-12 and exact confusion matrix",
            True)


def test_12_forward_pass_budget_tracks_the_plan(synth):
    blob = synth["test"][0].data
    tokens = as_tokens(blob)
    oracle = PatternOracle(b"\xaa" * 8, bytes(range(16)))
    counts = {}
    for mask, stride in ((50, 5), (10, 1)):
        counter = CountingClassifier(oracle)
        cfg = DefenseConfig(mask, stride, 1)
        byteshield_predict(counter, tokens, cfg)
        plan = plan_windows(len(tokens), cfg)
        assert counter.count == len(plan.starts)
        assert counter.count <= plan.n_nominal + 1
        counts[(mask, stride)] = counter.count
    ok = counts[(50, 5)] <= 11 and counts[(10, 1)] >= 90
    _report(12, "forward passes per prediction equal the planned window "
            "count", ok, f"M=50 S=5 -> {counts[(50, 5)]} <= 11, "
            f"M=10 S=1 -> {counts[(10, 1)]} >= 90")
