import csv

import pytest
import yaml

from cli import EXIT_ERROR, EXIT_FAILED, EXIT_OK, main

SMALL_CONFIG = {
    "dataset": {"classes": 3, "points_per_class": 10, "seed": 2},
    "train": {"epochs": 2, "batch_size": 10, "hidden": [4], "k": 3, "seed": 5},
    "policy": {"metric": "l2", "threshold": "static", "delta": 1e-6},
    "attack": {"q": 1, "s": 4, "probe_iters": 3, "data_lr": 0.01},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL_CONFIG))
    return str(path)


@pytest.fixture
def proof_path(tmp_path, config_path):
    path = tmp_path / "proof.bin"
    assert main(["prove", "--config", config_path, "--out", str(path)]) == EXIT_OK
    return str(path)


def test_prove_then_verify(tmp_path, config_path, proof_path, capsys):
    csv_path = tmp_path / "verdicts.csv"
    code = main(["verify", "--proof", proof_path, "--config", config_path, "--csv", str(csv_path)])

    assert code == EXIT_OK
    assert "overall: VALID" in capsys.readouterr().out
    with csv_path.open(newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["decision"] for r in rows] == ["ACCEPT", "ACCEPT"]


def test_verify_against_other_rows_is_invalid(tmp_path, proof_path):
    other = dict(SMALL_CONFIG, dataset={"classes": 3, "points_per_class": 10, "seed": 3})
    other_path = tmp_path / "other.yaml"
    other_path.write_text(yaml.safe_dump(other))
    assert main(["verify", "--proof", proof_path, "--config", str(other_path)]) == EXIT_FAILED


def test_commit_twice_is_an_error(tmp_path, proof_path, capsys):
    ledger = str(tmp_path / "ledger.tsv")
    assert main(["commit", "--proof", proof_path, "--ledger", ledger, "--label", "mine"]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith("\tmine")
    assert main(["commit", "--proof", proof_path, "--ledger", ledger]) == EXIT_ERROR


def test_infinitesimal_attack_command(tmp_path, config_path, proof_path):
    forged = tmp_path / "forged.bin"
    code = main(["attack", "--kind", "inf", "--victim", proof_path, "--out", str(forged),
                 "--config", config_path, "--delta", "1000"])
    assert code == EXIT_OK
    assert forged.stat().st_size > 0


def test_bounds_commands(capsys):
    assert main(["bounds", "--lemma", "stability", "--var-p", "4", "--mean", "10", "--c", "0.5",
                 "--var-f", "3"]) == EXIT_OK
    assert "zeta=0.0625" in capsys.readouterr().out

    assert main(["bounds", "--lemma", "queries", "--var", "100", "--mean", "10", "--c", "0.5"]) == EXIT_OK
    assert "vacuous" in capsys.readouterr().out

    assert main(["bounds", "--bound", "angle", "--theta", "0.5", "--trials", "1000"]) == EXIT_OK
    assert "violations=0" in capsys.readouterr().out

    assert main(["bounds", "--bound", "stability", "--mean", "10", "--c", "1.5"]) == EXIT_ERROR


def test_run_command(tmp_path, config_path, capsys):
    out = tmp_path / "results"
    code = main(["run", "--exp", "probe_ordering", "--config", config_path, "--out", str(out), "--repeats", "1"])
    assert code == EXIT_OK
    assert "PASS one_delta_per_row" in capsys.readouterr().out
    assert (out / "summary.json").exists()


def test_errors_exit_with_code_two(tmp_path):
    assert main(["prove", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "p.bin")]) == EXIT_ERROR
    garbage = tmp_path / "garbage.bin"
    garbage.write_bytes(b"garbage")
    assert main(["verify", "--proof", str(garbage)]) == EXIT_ERROR
