import json
import subprocess
import sys

import pytest

from parity_transformer.cli import DEFAULTS, config_hash, main, write_atomic
from parity_transformer.model import TransformerModel

FAST_VERIFY = ["verify-parity", "--lengths", "64", "--samples", "50"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestVerifyParity:
    def test_default_passes(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        code, text, _ = run(FAST_VERIFY + ["--out", str(out)], capsys)
        assert code == 0 and text.startswith("verify-parity: PASS")
        report = json.loads(out.read_text())
        assert report["passed"] and report["n_min"] == 8
        assert [c["n"] for c in report["checks"]] == [8, 9, 10, 11, 12, 64]
        assert report["seed"] == 0 and len(report["config_hash"]) == 16

    def test_large_alpha_reports_counterexample(self, capsys):
        code, text, _ = run(["verify-parity", "--alpha", "0.9", "--lengths", "64", "--samples", "20",
                             "--format", "json"], capsys)
        assert code == 1
        report = json.loads(text)
        bad = [c for c in report["checks"] if not c["passed"]]
        assert bad and set(bad[0]["counterexamples"][0]["input"]) <= {"0", "1"}

    def test_short_lengths_are_skipped(self, capsys):
        code, text, _ = run(["verify-parity", "--lengths", "4", "--samples", "5"], capsys)
        assert code == 0 and "out of certified range" in text

    def test_restricted(self, capsys):
        code, _, _ = run(FAST_VERIFY + ["--model", "restricted"], capsys)
        assert code == 0

    def test_bad_precision_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["verify-parity", "--precision", "quad"])
        assert info.value.code == 2

    def test_invalid_constants_exit_two(self, capsys):
        code, _, err = run(["verify-parity", "--M", "3"], capsys)
        assert code == 2 and err.startswith("error:")


class TestConfig:
    def test_json_and_yaml_with_flag_override(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"samples": 7, "lengths": [64], "seed": 5}))
        (tmp_path / "c.yaml").write_text("samples: 7\nlengths: [64]\nseed: 5\n")
        reports = []
        for name in ("c.json", "c.yaml"):
            code, text, _ = run(["verify-parity", "--config", str(tmp_path / name), "--seed", "9",
                                 "--format", "json"], capsys)
            assert code == 0
            reports.append(json.loads(text))
        assert reports[0] == reports[1]
        assert reports[0]["config"]["samples"] == 7 and reports[0]["seed"] == 9

    def test_unknown_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"sampels": 7}))
        code, _, err = run(["verify-parity", "--config", str(tmp_path / "c.json")], capsys)
        assert code == 2 and "sampels" in err

    def test_hash_depends_on_settings(self):
        a = dict(DEFAULTS["sensitivity"])
        b = dict(a, seed=1)
        assert config_hash("sensitivity", a) != config_hash("sensitivity", b)
        assert config_hash("sensitivity", a) == config_hash("sensitivity", dict(a))


class TestDeterminism:
    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        paths = [tmp_path / "a.json", tmp_path / "b.json"]
        for p in paths:
            assert run(FAST_VERIFY + ["--seed", "4", "--out", str(p)], capsys)[0] == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        target = tmp_path / "sub" / "r.json"
        write_atomic(target, "{}\n")
        write_atomic(target, "[]\n")
        assert target.read_text() == "[]\n"
        assert [p.name for p in target.parent.iterdir()] == ["r.json"]


class TestOtherCommands:
    def test_calibrate_small_grid(self, tmp_path, capsys):
        out = tmp_path / "cal.json"
        code, text, _ = run(["calibrate", "--alphas", "0.6", "0.9", "--cs", "0.34", "--n-max", "64",
                             "--out", str(out)], capsys)
        assert code == 0 and "chosen" in text
        code, _, _ = run(FAST_VERIFY + ["--calibration", str(out)], capsys)
        assert code == 0

    def test_calibrate_infeasible(self, capsys):
        code, _, _ = run(["gap-scan", "--alphas", "0.9", "--cs", "0.34", "--n-max", "32"], capsys)
        assert code == 1

    def test_lemmas_single_order(self, capsys):
        code, text, _ = run(["lemmas", "--order", "2", "--exponents", "5", "10", "--n-max", "256"], capsys)
        assert code == 0 and "faulhaber-order-2: PASS" in text

    def test_lemmas_warns_on_short_range(self, capsys):
        code, text, _ = run(["lemmas", "--order", "0", "--exponents", "3", "--n-min", "2", "--n-max", "8",
                             "--format", "json"], capsys)
        assert code == 0 and json.loads(text)["warnings"]

    def test_sensitivity(self, capsys):
        code, text, _ = run(["sensitivity", "--samples", "3", "--sweep-lengths", "6", "--cut-trials", "50",
                             "--cut-lengths", "8", "9", "--seed", "2"], capsys)
        assert code == 0
        assert "seed 2" in text and "FAIL" not in text

    @pytest.mark.parametrize("kind", ["full", "restricted", "majority"])
    def test_build_round_trips(self, kind, tmp_path, capsys):
        out = tmp_path / f"{kind}.json"
        assert run(["build", "--model", kind, "--out", str(out)], capsys)[0] == 0
        model = TransformerModel.from_dict(json.loads(out.read_text())["model"])
        assert model.vocabulary[:2] == ("0", "1")

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "parity_transformer", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and "0.1.0" in res.stdout
