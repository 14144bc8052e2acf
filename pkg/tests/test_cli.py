"""End-to-end checks for the command-line interface.

Every test drives ``main(argv)`` directly and asserts on exit codes, stdout,
stderr, and files left on disk.  A session-scoped workspace generates one
small corpus and trains one toy model that the read-only subcommand tests
share.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from byteshield.classifier import load_model
from byteshield.cli import main
from byteshield.corpus import load_manifest, load_samples
from byteshield.masking import DefenseConfig, plan_windows
from byteshield.pe import parse_pe, serialize_pe

DEFENSE = ["--defense", "byteshield", "--mask", "50", "--stride", "5",
           "--threshold", "2"]


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Corpus of 40 tiny files plus a toy model that separates them."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    model = root / "model.npz"
    assert main(["gen-corpus", "--out", str(corpus), "--n-benign", "20",
                 "--n-malicious", "20", "--min-size", "4096", "--max-size",
                 "4096", "--months", "2", "--seed", "1"]) == 0
    manifest = corpus / "manifest.csv"
    assert main(["train", "--manifest", str(manifest), "--out", str(model),
                 "--preset", "toy", "--defense", "byteshield", "--mask", "50",
                 "--epochs", "30", "--batch-size", "8", "--seed", "2"]) == 0
    return {"root": root, "corpus": corpus, "manifest": manifest,
            "model": model}


def _first_file(workspace, label):
    for rec in load_manifest(workspace["manifest"]):
        if rec.label == label:
            return workspace["corpus"] / rec.path
    raise AssertionError("label missing from manifest")


# ---------------------------------------------------------------------- #
# gen-corpus / train                                                     #
# ---------------------------------------------------------------------- #

def test_gen_corpus_writes_consistent_manifest(workspace):
    records = load_manifest(workspace["manifest"])
    assert len(records) == 40
    assert sum(r.label for r in records) == 20
    for rec in records:
        assert (workspace["corpus"] / rec.path).is_file()


def test_gen_corpus_rejects_bad_sizes(tmp_path, capsys):
    code = main(["gen-corpus", "--out", str(tmp_path / "c"),
                 "--min-size", "100"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_train_reports_losses_and_saves_model(workspace, tmp_path, capsys):
    out = tmp_path / "m.npz"
    code = main(["train", "--manifest", str(workspace["manifest"]),
                 "--out", str(out), "--preset", "toy", "--epochs", "3",
                 "--batch-size", "8", "--seed", "4"])
    assert code == 0
    msg = capsys.readouterr().out
    assert "epoch losses:" in msg
    assert len(msg.split("epoch losses:")[1].split("\n")[0].split()) == 3
    load_model(out)  # parses back
    assert not list(tmp_path.glob("m.npz.*"))  # no temp leftovers


def test_train_rejects_bad_epochs(workspace, tmp_path):
    assert main(["train", "--manifest", str(workspace["manifest"]),
                 "--out", str(tmp_path / "m.npz"), "--epochs", "0"]) == 2


# ---------------------------------------------------------------------- #
# predict                                                                #
# ---------------------------------------------------------------------- #

def test_predict_labels_manifest_perfectly(workspace, capsys):
    code = main(["predict", "--model", str(workspace["model"]),
                 "--manifest", str(workspace["manifest"]), *DEFENSE])
    assert code == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert len(lines) == 40
    want = {r.path: r.label for r in load_manifest(workspace["manifest"])}
    for line in lines:
        path, verdict = line.split("\t")
        assert verdict == ("malicious" if want[path] else "benign"), path


def test_predict_explain_emits_vote_tally(workspace, capsys):
    target = _first_file(workspace, 1)
    code = main(["predict", "--model", str(workspace["model"]), *DEFENSE,
                 "--explain", str(target)])
    assert code == 0
    row = json.loads(capsys.readouterr().out)
    cfg = DefenseConfig(50, 5, 2)
    plan = plan_windows(target.stat().st_size, cfg)
    assert row["label"] == "malicious"
    assert row["num_votes"] == plan.num_windows
    assert row["benign_threshold"] == 2 / plan.num_windows
    assert set(row["tally"]) == {"num_malicious", "num_benign", "starts",
                                 "scores"}
    assert row["tally"]["num_malicious"] >= 2


def test_predict_explain_without_defense_reports_score(workspace, capsys):
    target = _first_file(workspace, 0)
    code = main(["predict", "--model", str(workspace["model"]),
                 "--defense", "none", "--explain", str(target)])
    assert code == 0
    row = json.loads(capsys.readouterr().out)
    assert row["label"] == "benign"
    assert 0.0 <= row["score"] < 0.5
    assert "tally" not in row


def test_predict_out_file(workspace, tmp_path):
    out = tmp_path / "preds.txt"
    benign = _first_file(workspace, 0)
    code = main(["predict", "--model", str(workspace["model"]), *DEFENSE,
                 "--out", str(out), str(benign)])
    assert code == 0
    assert out.read_text().strip().endswith("benign")
    assert not list(tmp_path.glob("preds.txt.*"))


def test_predict_requires_inputs(workspace, capsys):
    code = main(["predict", "--model", str(workspace["model"])])
    assert code == 2
    assert "no inputs" in capsys.readouterr().err


def test_predict_missing_model_exits_1(workspace):
    code = main(["predict", "--model", str(workspace["root"] / "nope.npz"),
                 str(_first_file(workspace, 0))])
    assert code == 1


# ---------------------------------------------------------------------- #
# attack                                                                 #
# ---------------------------------------------------------------------- #

RECORD_KEYS = {"sample_id", "strategy", "budget_percent", "init", "seed",
               "queries", "initial_score", "final_score", "evaded"}


def test_attack_manifest_writes_jsonl(workspace, tmp_path, capsys):
    out = tmp_path / "attacks.jsonl"
    code = main(["attack", "--model", str(workspace["model"]),
                 "--manifest", str(workspace["manifest"]),
                 "--defense", "none", "--strategy", "padding",
                 "--budget-percent", "10", "--opt-budget", "40",
                 "--seed", "7", "--out", str(out)])
    assert code == 0
    rows = [json.loads(l) for l in out.read_text().strip().split("\n")]
    assert len(rows) == 20
    for row in rows:
        assert set(row) == RECORD_KEYS
        assert row["queries"] <= 40
    assert "attacked 20" in capsys.readouterr().err


def test_attack_env_seed_matches_flag(workspace, tmp_path, monkeypatch,
                                      capsys):
    target = _first_file(workspace, 1)
    base = ["attack", "--model", str(workspace["model"]), "--defense",
            "none", "--strategy", "padding", "--budget-percent", "5",
            "--opt-budget", "10", "--init", "zeros", str(target)]

    def run(extra, env):
        if env is None:
            monkeypatch.delenv("BYTESHIELD_SEED", raising=False)
        else:
            monkeypatch.setenv("BYTESHIELD_SEED", env)
        assert main(base + extra) == 0
        return json.loads(capsys.readouterr().out.strip().split("\n")[0])

    flagged = run(["--seed", "5"], None)
    via_env = run([], "5")
    other = run([], "6")
    assert flagged == via_env
    assert other["seed"] != via_env["seed"]


def test_attack_strict_on_undetected_file(workspace, capsys):
    benign = _first_file(workspace, 0)
    code = main(["attack", "--model", str(workspace["model"]),
                 "--defense", "none", "--init", "zeros",
                 "--opt-budget", "10", str(benign)])
    assert code == 1
    assert "not detected" in capsys.readouterr().err


def test_attack_benign_init_needs_donor(workspace, capsys):
    target = _first_file(workspace, 1)
    code = main(["attack", "--model", str(workspace["model"]),
                 "--defense", "none", "--opt-budget", "10", str(target)])
    assert code == 1
    assert "donor" in capsys.readouterr().err
    code = main(["attack", "--model", str(workspace["model"]),
                 "--defense", "none", "--opt-budget", "10",
                 "--donor-manifest", str(workspace["manifest"]),
                 str(target)])
    assert code == 0


def test_attack_saved_outputs_reparse(workspace, tmp_path, capsys):
    out_dir = tmp_path / "attacked"
    code = main(["attack", "--model", str(workspace["model"]),
                 "--manifest", str(workspace["manifest"]),
                 "--defense", "none", "--strategy", "section_injection",
                 "--budget-percent", "2", "--opt-budget", "8",
                 "--seed", "1", "--out", str(tmp_path / "a.jsonl"),
                 "--save-attacked", str(out_dir)])
    assert code == 0
    saved = sorted(out_dir.iterdir())
    assert len(saved) == 20
    for path in saved[:3]:
        blob = path.read_bytes()
        assert serialize_pe(parse_pe(blob)) == blob


def test_attack_requires_malicious_inputs(workspace, tmp_path, capsys):
    benign_only = workspace["corpus"] / "benign_only.csv"
    records = [r for r in load_manifest(workspace["manifest"])
               if r.label == 0]
    from byteshield.corpus import write_manifest
    write_manifest(records, benign_only)
    code = main(["attack", "--model", str(workspace["model"]),
                 "--manifest", str(benign_only), "--defense", "none"])
    assert code == 2
    assert "no malicious inputs" in capsys.readouterr().err


# ---------------------------------------------------------------------- #
# evaluate / temporal-eval                                               #
# ---------------------------------------------------------------------- #

def test_evaluate_writes_report_and_csv(workspace, tmp_path, capsys):
    report_path = tmp_path / "report.json"
    csv_path = tmp_path / "rows.csv"
    code = main(["evaluate", "--model", str(workspace["model"]),
                 "--manifest", str(workspace["manifest"]), *DEFENSE,
                 "--strategy", "padding", "--budgets", "0,5",
                 "--opt-budget", "20", "--seed", "3",
                 "--out", str(report_path), "--csv", str(csv_path)])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["clean_metrics"]["f1"] == 1.0
    assert report["seed"] == 3
    assert report["config"]["budgets"] == [0.0, 5.0]
    assert [r["budget_percent"] for r in report["rows"]] == [0.0, 5.0]
    accs = [r["adversarial_accuracy"] for r in report["rows"]]
    assert report["aut_adversarial_accuracy"] == pytest.approx(
        float(np.trapezoid(accs)) / (len(accs) - 1))
    header = csv_path.read_text().split("\n")[0].split(",")
    assert "adversarial_accuracy" in header


def test_evaluate_rejects_bad_budgets(workspace, tmp_path):
    code = main(["evaluate", "--model", str(workspace["model"]),
                 "--manifest", str(workspace["manifest"]),
                 "--budgets", "1,x", "--out", str(tmp_path / "r.json")])
    assert code == 2


def test_temporal_eval_buckets_by_month(workspace, tmp_path, capsys):
    out = tmp_path / "temporal.json"
    code = main(["temporal-eval", "--model", str(workspace["model"]),
                 "--manifest", str(workspace["manifest"]), *DEFENSE,
                 "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["months"] == ["2019-09", "2019-10"]
    assert report["skipped"] == []
    assert [r["month"] for r in report["rows"]] == ["2019-09", "2019-10"]
    for row in report["rows"]:
        assert row["n_samples"] == 20
        assert row["accuracy"] == 1.0


# ---------------------------------------------------------------------- #
# certify                                                                #
# ---------------------------------------------------------------------- #

def test_certify_small_benign_blob(workspace, tmp_path, capsys):
    blob = tmp_path / "small.bin"
    rng = np.random.default_rng(5)
    blob.write_bytes(rng.integers(0, 256, 512, dtype=np.uint8).tobytes())
    code = main(["certify", "--model", str(workspace["model"]),
                 "--mask", "50", str(blob)])
    assert code == 0
    row = json.loads(capsys.readouterr().out)
    assert row["mask_len"] == 256
    assert row["num_versions"] == 257
    assert 0 <= row["num_malicious"] <= row["num_versions"]
    if row["unanimous"]:
        assert row["label"] in ("benign", "malicious")
    else:
        assert row["label"] is None


def test_certify_size_cap_and_force(workspace, tmp_path, monkeypatch,
                                    capsys):
    import byteshield.cli as cli_mod
    blob = tmp_path / "blob.bin"
    blob.write_bytes(bytes(range(256)) * 2)
    monkeypatch.setattr(cli_mod, "CERTIFY_SIZE_CAP", 256)
    code = main(["certify", "--model", str(workspace["model"]),
                 "--mask", "50", str(blob)])
    assert code == 2
    assert "--force" in capsys.readouterr().err
    code = main(["certify", "--model", str(workspace["model"]),
                 "--mask", "50", "--force", str(blob)])
    assert code == 0


# ---------------------------------------------------------------------- #
# settings resolution and error reporting                                #
# ---------------------------------------------------------------------- #

def test_config_file_supplies_defaults_flags_override(workspace, tmp_path,
                                                      capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"defense": "byteshield", "mask": 25,
                               "stride": 5, "threshold": 2}))
    target = _first_file(workspace, 0)
    length = target.stat().st_size

    def votes(extra):
        assert main(["predict", "--model", str(workspace["model"]),
                     "--config", str(cfg), "--explain", *extra,
                     str(target)]) == 0
        return json.loads(capsys.readouterr().out)["num_votes"]

    assert votes([]) == plan_windows(length, DefenseConfig(25, 5, 2)).num_windows
    assert votes(["--mask", "50"]) == plan_windows(
        length, DefenseConfig(50, 5, 2)).num_windows


def test_config_rejects_unknown_keys(workspace, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    code = main(["predict", "--model", str(workspace["model"]),
                 "--config", str(cfg), str(_first_file(workspace, 0))])
    assert code == 2
    assert "unknown keys" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["[1, 2]", "{not json"])
def test_config_must_be_a_json_object(workspace, tmp_path, text):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(text)
    assert main(["predict", "--model", str(workspace["model"]),
                 "--config", str(cfg),
                 str(_first_file(workspace, 0))]) == 2


def test_bad_flag_value_exits_2(workspace, capsys):
    code = main(["predict", "--model", str(workspace["model"]),
                 "--defense", "byteshield", "--mask", "200",
                 str(_first_file(workspace, 0))])
    assert code == 2
    assert "mask_percent" in capsys.readouterr().err


def test_json_errors_flag(workspace, capsys):
    code = main(["predict", "--model", str(workspace["model"]),
                 "--json-errors", "--defense", "byteshield",
                 "--mask", "200", str(_first_file(workspace, 0))])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert "mask_percent" in err["error"]
    assert err["type"] == "UsageError"


def test_bad_env_seed_exits_2(workspace, monkeypatch, capsys):
    monkeypatch.setenv("BYTESHIELD_SEED", "not-a-number")
    code = main(["predict", "--model", str(workspace["model"]), *DEFENSE,
                 str(_first_file(workspace, 0))])
    assert code == 2
    assert "BYTESHIELD_SEED" in capsys.readouterr().err


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
