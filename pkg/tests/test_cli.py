from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from blindvqa import cli
from blindvqa.protocol import Transcript

CSV_FILES = {
    "delegate": ("summary.csv", "plotdata.csv"),
    "verify": ("summary.csv", "plotdata.csv"),
    "loss": ("summary.csv", "plotdata.csv", "loss_table.csv"),
    "blindness": ("summary.csv", "plotdata.csv", "blindness.csv"),
    "train": ("summary.csv", "plotdata.csv", "train_log.csv"),
}


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, name, *args, config=None):
    out = tmp_path / name
    argv = [name, "--out", str(out), *args]
    if config is not None:
        tmp_path.mkdir(parents=True, exist_ok=True)
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    return cli.main(argv), out


class TestDelegate:
    def test_honest_h(self, tmp_path, capsys):
        code, out = run(tmp_path, "delegate", "--seed", "7", "--trials", "3")
        assert code == cli.EXIT_OK
        assert "accepted 3/3" in capsys.readouterr().out
        Transcript.read(out / "transcript.log").validate()
        row = read_csv(out / "summary.csv")[0]
        assert list(row) == list(cli.SUMMARY_COLUMNS)
        assert row["accepted_rate"] == "1" and row["seed"] == "7" and row["trials"] == "3"
        public = json.loads((out / "pattern.json").read_text())
        assert public["n_wires"] == 4

    def test_transcript_deterministic(self, tmp_path):
        _, a = run(tmp_path / "a", "delegate", "--seed", "7", "--trials", "2")
        _, b = run(tmp_path / "b", "delegate", "--seed", "7", "--trials", "2")
        assert (a / "transcript.log").read_bytes() == (b / "transcript.log").read_bytes()

    def test_exact_mode(self, tmp_path):
        config = {"circuit": {"w": 1, "ops": [{"gate": "rx", "wires": [0], "angle": 0.5}]}}
        code, out = run(tmp_path, "delegate", "--mode", "exact", config=config)
        assert code == cli.EXIT_OK
        point = read_csv(out / "plotdata.csv")[0]
        assert float(point["y"]) == pytest.approx(np.cos(0.5), abs=1e-9)

    def test_malicious_reports_abort(self, tmp_path):
        code, out = run(tmp_path, "delegate", "--malicious", "--seed", "1", "--trials", "50")
        rate = float(read_csv(out / "summary.csv")[0]["accepted_rate"])
        assert 0 < rate < 1
        assert code == cli.EXIT_ABORT

    def test_lossy_channel(self, tmp_path):
        code, out = run(tmp_path, "delegate", "--loss-prob", "0.2", "--trials", "20")
        assert code == cli.EXIT_OK
        assert float(read_csv(out / "summary.csv")[0]["resends_mean"]) > 0


class TestConfigErrors:
    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "seed": 3,\n  "trials": ,\n}\n')
        code = cli.main(["delegate", "--config", str(path), "--out", str(tmp_path)])
        assert code == cli.EXIT_CONFIG
        assert f"{path}:3:13" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["verify", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG

    @pytest.mark.parametrize(
        "command, config",
        [
            ("delegate", {"circuit": {"w": 1, "ops": [{"gate": "bogus", "wires": [0]}]}}),
            ("delegate", {"attack": {"counts": [9, 0, 0]}}),
            ("verify", {"n_wires": 8}),
            ("verify", {"species": "Y"}),
            ("loss", {"loss_probs": [1.5]}),
            ("train", {"runner": "cloud"}),
            ("delegate", {"seed": -1}),
        ],
    )
    def test_invalid_values(self, tmp_path, command, config):
        code, _ = run(tmp_path, command, config=config)
        assert code == cli.EXIT_CONFIG

    def test_flags_override_config(self, tmp_path):
        code, out = run(tmp_path, "delegate", "--seed", "5", config={"seed": 2, "trials": 1})
        assert code == cli.EXIT_OK
        assert read_csv(out / "summary.csv")[0]["seed"] == "5"


class TestVerify:
    def test_bound_column_and_identity_row(self, tmp_path):
        code, out = run(tmp_path, "verify", "--seed", "3", "--trials", "4000")
        assert code == cli.EXIT_OK
        rows = read_csv(out / "summary.csv")
        assert [r["attack_weight"] for r in rows] == ["0", "1", "2", "3"]
        assert float(rows[0]["escape_rate"]) == 1.0
        assert [round(float(r["bound"]), 4) for r in rows[1:]] == [0.8736, 0.7631, 0.6667]
        for r, exact in zip(rows[1:], [4 / 6, 6 / 15, 4 / 20]):
            assert abs(float(r["escape_rate"]) - exact) < 3 * np.sqrt(exact * (1 - exact) / 4000)

    def test_parallel_matches_serial(self, tmp_path):
        args = ("--seed", "11", "--trials", "25000")
        _, one = run(tmp_path / "p1", "verify", *args, "--parallel", "1")
        _, two = run(tmp_path / "p2", "verify", *args, "--parallel", "2")
        for name in CSV_FILES["verify"]:
            assert (one / name).read_bytes() == (two / name).read_bytes()

    def test_protocol_model(self, tmp_path):
        code, out = run(tmp_path, "verify", "--model", "protocol", "--trials", "300", config={"weights": [1]})
        assert code == cli.EXIT_OK
        assert read_csv(out / "summary.csv")[0]["experiment"] == "verify_protocol"


class TestLoss:
    def test_table(self, tmp_path):
        code, out = run(tmp_path, "loss", "--seed", "2", "--trials", "3000", config={"loss_probs": [0.0, 0.01]})
        assert code == cli.EXIT_OK
        table = read_csv(out / "loss_table.csv")
        assert float(table[0]["baseline_analytic"]) == 0.0 and float(table[0]["resends_mc"]) == 0.0
        assert float(table[1]["baseline_analytic"]) == pytest.approx(0.6622, abs=1e-4)
        assert all(r["redelegations"] == "0" for r in table)

    def test_single_probability_flag(self, tmp_path):
        _, out = run(tmp_path, "loss", "--loss-prob", "0.05", "--trials", "200")
        assert [r["loss_prob"] for r in read_csv(out / "loss_table.csv")] == ["0.05"]


class TestBlindnessAndTrain:
    def test_blindness(self, tmp_path):
        code, out = run(tmp_path, "blindness")
        assert code == cli.EXIT_OK
        metrics = {r["metric"]: float(r["value"]) for r in read_csv(out / "blindness.csv")}
        assert metrics["bell_half_trace_distance"] < 1e-12
        assert metrics["phi_prime_uniform"] == 1 and metrics["phi_prime_shift_consistent"] == 1

    def test_train_zero_rate(self, tmp_path):
        code, out = run(tmp_path, "train", config={"eta": 0.0, "iterations": 4})
        assert code == cli.EXIT_OK
        log = read_csv(out / "train_log.csv")
        assert len(log) == 4 and len({r["theta_0"] for r in log}) == 1

    def test_train_toy_converges(self, tmp_path):
        code, out = run(tmp_path, "train", config={"runner": "direct"})
        assert code == cli.EXIT_OK
        assert float(read_csv(out / "train_log.csv")[-1]["cost"]) == pytest.approx(-1.0, abs=0.01)


@pytest.mark.parametrize(
    "command, args",
    [
        ("delegate", ("--trials", "20", "--loss-prob", "0.1")),
        ("verify", ("--trials", "3000")),
        ("loss", ("--trials", "500")),
        ("blindness", ()),
        ("train", ("--mode", "shots", "--trials", "50")),
    ],
)
def test_byte_identical_reruns(tmp_path, command, args):
    config = {"iterations": 3} if command == "train" else None
    outs = [run(tmp_path / str(i), command, "--seed", "42", *args, config=config)[1] for i in range(2)]
    for name in CSV_FILES[command]:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
