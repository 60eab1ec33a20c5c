import json
import subprocess
import sys

import numpy as np
import pytest

from hmmvt import io
from hmmvt.cli import CHECKS, EXIT_CHECK, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from hmmvt.unambiguous.scenario import REFERENCE


def report(out):
    return json.loads((out / "report.json").read_text())


def write(path, text):
    path.write_text(text)
    return str(path)


class TestSample:
    def test_outputs(self, tmp_path):
        assert main(["sample", "--n", "500", "--seed", "4", "--out", str(tmp_path)]) == EXIT_OK
        states = io.read_sequence(tmp_path / "states.txt")
        obs = io.read_sequence(tmp_path / "obs.txt")
        assert states.size == 501 and obs.size == 500
        assert set(np.unique(obs)) <= {0, 1}
        # symbol 1 (file label) is emitted only from state 1
        np.testing.assert_array_equal(obs == 0, states[1:] == 0)
        r = report(tmp_path)
        assert r["passed"] and r["seed"] == 4 and r["scenario"] == REFERENCE.as_dict()
        assert "wall_clock_seconds" in json.loads((tmp_path / "timing.json").read_text())

    def test_report_reproducible(self, tmp_path):
        argv = ["sample", "--n", "300", "--seed", "9", "--out", str(tmp_path)]
        assert main(argv) == EXIT_OK
        first = (tmp_path / "report.json").read_bytes(), (tmp_path / "obs.txt").read_bytes()
        assert main(argv) == EXIT_OK
        assert ((tmp_path / "report.json").read_bytes(), (tmp_path / "obs.txt").read_bytes()) == first

    def test_model_file(self, tmp_path):
        m = write(tmp_path / "m.toml", "transition = [[0.9, 0.2], [0.1, 0.8]]\n"
                                       "emission = [[0.7, 0.1], [0.3, 0.9]]\n")
        assert main(["sample", "--model", m, "--n", "50", "--seed", "1", "--out", str(tmp_path / "o")]) == EXIT_OK

    @pytest.mark.parametrize("n", ["0", "-3"])
    def test_bad_length(self, tmp_path, n):
        assert main(["sample", "--n", n, "--seed", "1", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_missing_seed(self, tmp_path):
        assert main(["sample", "--n", "10", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_unknown_subcommand(self, tmp_path):
        assert main(["bogus"]) == EXIT_USAGE


class TestInputErrors:
    def test_missing_model(self, tmp_path):
        argv = ["sample", "--model", str(tmp_path / "nope.toml"), "--n", "5", "--seed", "1", "--out", str(tmp_path)]
        assert main(argv) == EXIT_IO

    def test_malformed_toml(self, tmp_path):
        m = write(tmp_path / "m.toml", "transition = [[0.9, \n")
        assert main(["sample", "--model", m, "--n", "5", "--seed", "1", "--out", str(tmp_path)]) == EXIT_IO

    def test_non_stochastic(self, tmp_path):
        m = write(tmp_path / "m.toml", "transition = [[0.9, 0.2], [0.2, 0.8]]\nemission = [[1.0, 1.0]]\n")
        assert main(["sample", "--model", m, "--n", "5", "--seed", "1", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_shape_mismatch(self, tmp_path):
        m = write(tmp_path / "m.toml", "L = 3\ntransition = [[0.8, 0.2], [0.2, 0.8]]\nemission = [[1.0, 1.0]]\n")
        assert main(["sample", "--model", m, "--n", "5", "--seed", "1", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_bad_scenario(self, tmp_path):
        s = write(tmp_path / "s.toml", "p1 = 0.7\np2 = 0.5\nq1 = 0.4\nr1 = 0.5\n")
        assert main(["sample", "--scenario", s, "--n", "5", "--seed", "1", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_both_inputs(self, tmp_path):
        s = write(tmp_path / "s.toml", "p1 = 0.3\np2 = 0.2\nq1 = 0.4\nr1 = 0.5\n")
        argv = ["sample", "--scenario", s, "--model", s, "--n", "5", "--seed", "1", "--out", str(tmp_path)]
        assert main(argv) == EXIT_USAGE

    def test_unwritable_out(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["sample", "--n", "5", "--seed", "1", "--out", str(blocker / "sub")]) == EXIT_IO

    def test_missing_obs(self, tmp_path):
        assert main(["train", "--obs", str(tmp_path / "x.txt"), "--seed", "1", "--out", str(tmp_path)]) == EXIT_IO

    def test_zero_based_obs_rejected(self, tmp_path):
        o = write(tmp_path / "x.txt", "0\n1\n")
        assert main(["train", "--obs", o, "--seed", "1", "--out", str(tmp_path)]) == EXIT_USAGE


class TestTrain:
    def test_vt_reaches_fixed_point(self, tmp_path):
        assert main(["train", "--method", "vt", "--n", "20000", "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
        r = report(tmp_path)
        assert r["nearest_fixed_point"]["distance_Linf"] <= 0.02
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == "iteration,log_likelihood_per_symbol,p1,p2,q1,r1,delta_Linf"
        assert len(lines) == r["iterations"] + 2

    def test_bw_monotone(self, tmp_path):
        argv = ["train", "--method", "bw", "--n", "5000", "--seed", "2", "--max-iter", "50", "--out", str(tmp_path)]
        assert main(argv) == EXIT_OK
        r = report(tmp_path)
        assert r["monotone_log_likelihood"]
        assert r["stats_residual"] < 0.05

    def test_obs_roundtrip(self, tmp_path):
        assert main(["sample", "--n", "2000", "--seed", "5", "--out", str(tmp_path / "s")]) == EXIT_OK
        argv = ["train", "--obs", str(tmp_path / "s" / "obs.txt"), "--init-seed", "1", "--out", str(tmp_path / "t")]
        assert main(argv) == EXIT_OK
        assert report(tmp_path / "t")["n"] == 2000

    def test_unconverged_check_fails(self, tmp_path):
        argv = ["train", "--method", "vt", "--n", "20000", "--seed", "1", "--max-iter", "0", "--out", str(tmp_path)]
        assert main(argv) == EXIT_CHECK
        assert report(tmp_path)["passed"] is False

    def test_general_model(self, tmp_path):
        m = write(tmp_path / "m.toml", "transition = [[0.9, 0.2], [0.1, 0.8]]\n"
                                       "emission = [[0.7, 0.1], [0.3, 0.9]]\n")
        argv = ["train", "--model", m, "--method", "bw", "--n", "3000", "--seed", "1", "--max-iter", "30",
                "--out", str(tmp_path / "o")]
        assert main(argv) == EXIT_OK
        header = (tmp_path / "o" / "trace.csv").read_text().splitlines()[0]
        assert header.startswith("iteration,log_likelihood_per_symbol,P11,")


ANALYZE_ARGS = {
    "katar": ["--seed", "0", "--count", "3"],
    "f-order": ["--seed", "0", "--count", "5"],
    "zeta-cross": ["--seed", "0", "--count", "2", "--kmax", "5"],
    "fixed-points": [],
    "manifold": ["--count", "50"],
    "partial": ["--fixed", "q1,r1", "--starts", "20"],
    "rate": ["--seed", "0", "--n", "20000"],
    "zeta-trunc": ["--kmax", "8"],
    "orbits": ["--kmax", "6"],
}


class TestAnalyze:
    def test_every_check_has_args(self):
        assert set(ANALYZE_ARGS) == set(CHECKS)

    @pytest.mark.parametrize("check", CHECKS)
    def test_check_runs(self, tmp_path, check):
        code = main(["analyze", "--check", check, *ANALYZE_ARGS[check], "--out", str(tmp_path)])
        r = report(tmp_path)
        assert r["check"] == check
        assert code == (EXIT_OK if r["passed"] else EXIT_CHECK)
        if check not in ("zeta-trunc",):
            assert code == EXIT_OK

    def test_fixed_points_report(self, tmp_path):
        assert main(["analyze", "--check", "fixed-points", "--out", str(tmp_path)]) == EXIT_OK
        fps = report(tmp_path)["fixed_points"]
        assert sorted(fp["nullified"] for fp in fps) == ["p1", "p2", "q1", "r1"]

    def test_default_seed_echoed(self, tmp_path):
        assert main(["analyze", "--check", "katar", "--count", "2", "--out", str(tmp_path)]) == EXIT_OK
        assert report(tmp_path)["config"]["seed"] == 0


class TestMapQuality:
    def test_small(self, tmp_path):
        argv = ["map-quality", "--n", "10000", "--trials", "2", "--seed", "1", "--out", str(tmp_path)]
        assert main(argv) == EXIT_OK
        r = report(tmp_path)
        assert r["config"]["trials"] == 2 and len(r["rows"]) == 5
        assert (tmp_path / "overlaps.csv").read_text().startswith("label,mean_overlap")

    def test_n_too_small(self, tmp_path):
        argv = ["map-quality", "--n", "100", "--trials", "2", "--seed", "1", "--out", str(tmp_path)]
        assert main(argv) == EXIT_USAGE


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hmmvt", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "0.1.0" in proc.stdout
