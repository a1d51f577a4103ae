import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from factorgate.certificates import FactorRep
from factorgate.cli import main, matrix_to_csv, parse_matrix
from factorgate.witness import GenSpec, perturb, random_member, tightness_example

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def ones4(tmp_path):
    path = tmp_path / "ones.csv"
    path.write_text(matrix_to_csv(np.eye(4) + np.ones((4, 4))))
    return path


@pytest.fixture
def member8(tmp_path):
    sigma, rep = random_member(GenSpec(8, 2), 4)
    path = tmp_path / "member.json"
    path.write_text(json.dumps({"p": 8, "rows": sigma.tolist()}))
    return path


class TestDecide:
    def test_member(self, capsys, ones4):
        code, out, _ = run(capsys, "decide", "--m", 1, ones4)
        assert code == 0
        report = json.loads(out)
        assert np.allclose(report["certificate"]["gamma"], 1)

    def test_tightness(self, capsys):
        code, out, _ = run(capsys, "decide", "--m", 1, GOLDEN / "tightness_m1.csv")
        assert code == 1 and json.loads(out)["witness"]["kind"] == "rank_obstruction"

    def test_generated_two_factor(self, capsys, member8):
        code, _, _ = run(capsys, "decide", "--m", 2, "--restarts", 50, "--seed", 1, member8)
        assert code == 0

    def test_indeterminate_exit(self, capsys, tmp_path):
        # five rows admit no rank obstruction, so only the fit speaks
        sigma, _ = random_member(GenSpec(5, 2), 0)
        path = tmp_path / "near.csv"
        path.write_text(matrix_to_csv(perturb(sigma, 2e-5, 0)))
        code, out, _ = run(capsys, "decide", "--m", 2, "--restarts", 5, path)
        assert code == 2 and json.loads(out)["status"] == "indeterminate"

    def test_csv_output(self, capsys, ones4):
        code, out, _ = run(capsys, "decide", "--m", 1, "--format", "csv", ones4)
        lines = out.splitlines()
        assert lines[0] == "# status: member" and lines[1] == "delta,gamma_0"
        assert len(lines) == 6


class TestReduced:
    def test_below_threshold_size(self, capsys):
        code, _, _ = run(capsys, "decide-reduced", "--m", 1, "--subset-size", 3,
                         GOLDEN / "tightness_m1.csv")
        assert code == 0

    def test_default_size(self, capsys):
        code, out, _ = run(capsys, "decide-reduced", "--m", 1, GOLDEN / "tightness_m1.csv")
        assert code == 1 and json.loads(out)["witness"]["subset"] == [0, 1, 2, 3]

    def test_subset_count(self, capsys, member8):
        code, out, _ = run(capsys, "decide-reduced", "--m", 2, member8)
        assert code == 0 and json.loads(out)["diagnostics"]["subsets_checked"] == 28

    def test_bad_subset_size(self, capsys, ones4):
        code, _, _ = run(capsys, "decide-reduced", "--subset-size", 9, ones4)
        assert code == 64


class TestConstruct:
    def test_one_factor(self, capsys, tmp_path):
        sigma, _ = random_member(GenSpec(6, 1), 0)
        path = tmp_path / "s.csv"
        path.write_text(matrix_to_csv(sigma))
        code, out, _ = run(capsys, "construct", "--m", 1, path)
        report = json.loads(out)
        assert code == 0 and report["max_error"] <= 1e-9
        rep = FactorRep.from_dict(report["certificate"])
        assert rep.max_error(sigma) <= 1e-9
        assert report["steps"][0]["path"] == "base"

    def test_two_factor(self, capsys, member8):
        code, out, _ = run(capsys, "construct", "--m", 2, member8)
        assert code == 0 and json.loads(out)["max_error"] <= 1e-6

    def test_tightness_precondition(self, capsys, tmp_path):
        path = tmp_path / "t2.csv"
        path.write_text(matrix_to_csv(tightness_example(2)))
        code, out, _ = run(capsys, "construct", "--m", 2, path)
        assert code == 1 and json.loads(out)["step"] == "precondition"

    def test_too_small(self, capsys, ones4):
        assert run(capsys, "construct", "--m", 2, ones4)[0] == 64


class TestGlue:
    def test_round_trip(self, capsys, tmp_path):
        sigma, rep = random_member(GenSpec(7, 2), 5)
        (tmp_path / "s.json").write_text(json.dumps({"p": 7, "rows": sigma.tolist()}))
        (tmp_path / "top.json").write_text(json.dumps(rep.restrict(range(6)).to_dict()))
        (tmp_path / "bot.json").write_text(json.dumps(rep.restrict(range(1, 7)).to_dict()))
        code, out, _ = run(capsys, "glue", tmp_path / "s.json", "--top", tmp_path / "top.json",
                           "--bottom", tmp_path / "bot.json", "--B", "1,2", "--C", "3,4")
        assert code == 0 and json.loads(out)["max_error"] <= 1e-9

    def test_bad_overlap(self, capsys, tmp_path):
        sigma, rep = random_member(GenSpec(7, 2), 5)
        bottom = rep.restrict(range(1, 7))
        (tmp_path / "s.json").write_text(json.dumps({"rows": sigma.tolist()}))
        (tmp_path / "top.json").write_text(json.dumps(rep.restrict(range(6)).to_dict()))
        (tmp_path / "bot.json").write_text(
            json.dumps(FactorRep(bottom.delta, -bottom.gamma).to_dict()))
        code, _, err = run(capsys, "glue", tmp_path / "s.json", "--top", tmp_path / "top.json",
                           "--bottom", tmp_path / "bot.json", "--B", "1,2", "--C", "3,4")
        assert code == 65 and "overlap" in err


class TestExampleRandom:
    def test_example_certificates(self, capsys):
        code, out, _ = run(capsys, "example", "--m", 2, "--certificates")
        report = json.loads(out)
        assert code == 0 and len(report["deleted_certificates"]) == 6
        sigma = np.array(report["rows"])
        for entry in report["deleted_certificates"]:
            keep = [i for i in range(6) if i != entry["dropped"]]
            rep = FactorRep.from_dict(entry["certificate"])
            assert np.array_equal(rep.reconstruct(), sigma[np.ix_(keep, keep)])

    def test_example_to_file(self, capsys, tmp_path):
        out = tmp_path / "ex.csv"
        code, stdout, _ = run(capsys, "example", "--m", 0, "--format", "csv", "--out", out)
        assert code == 0 and stdout == "" and out.read_text() == "2,1\n1,2\n"

    def test_random_round_trip(self, capsys, tmp_path):
        out = tmp_path / "r.json"
        assert run(capsys, "random", "--m", 2, "--p", 6, "--seed", 3,
                   "--pattern", "rank-one:0,1,2", "--out", out)[0] == 0
        data = json.loads(out.read_text())
        rep = FactorRep.from_dict(data["certificate"])
        assert rep.max_error(np.array(data["rows"])) <= 1e-14
        assert run(capsys, "decide", "--m", 2, out)[0] == 0

    def test_random_bad_pattern(self, capsys):
        assert run(capsys, "random", "--p", 5, "--pattern", "stripes")[0] == 64
        assert run(capsys, "random", "--m", 1, "--p", 5, "--pattern", "two-block")[0] == 64


class TestVerifyFit:
    def test_verify_one_factor(self, capsys):
        code, out, _ = run(capsys, "verify", "--m", 1, "--p", 6, "--trials", 100, "--seed", 3)
        report = json.loads(out)
        assert code == 0
        assert report["sweeps"][0]["agreements"] == 100

    def test_verify_two_factor(self, capsys):
        code, out, _ = run(capsys, "verify", "--m", 2, "--p", 7, "--trials", 50)
        sweep = json.loads(out)["sweeps"][0]
        assert code == 0
        assert sweep["agreements"] + sweep["indeterminate_members"] \
            + sweep["indeterminate_non_members"] == 50

    def test_verify_diagonal(self, capsys):
        code, out, _ = run(capsys, "verify", "--m", 0, "--p", 5, "--trials", 10,
                           "--format", "csv")
        assert code == 0 and out.splitlines()[1] == "0,5,10,10,0,0,0"

    def test_verify_bad_trials(self, capsys):
        assert run(capsys, "verify", "--trials", 0)[0] == 64

    def test_fit(self, capsys, member8):
        code, out, _ = run(capsys, "fit", "--m", 2, "--restarts", 3, member8)
        report = json.loads(out)
        assert code == 0 and len(report["per_start"]) == 3


class TestInput:
    def test_json_and_csv_agree(self):
        sigma, _ = random_member(GenSpec(5, 2), 0)
        from_csv = parse_matrix(matrix_to_csv(sigma))
        from_json = parse_matrix(json.dumps({"p": 5, "rows": sigma.tolist()}))
        assert np.array_equal(from_csv, sigma) and np.array_equal(from_json, sigma)

    def test_csv_json_csv_bit_identical(self, rng):
        a = rng.normal(size=(6, 6)) * 10.0 ** rng.integers(-8, 8, size=(6, 6))
        a = a + a.T
        text = matrix_to_csv(a)
        via_json = parse_matrix(json.dumps({"rows": parse_matrix(text).tolist()}))
        assert matrix_to_csv(via_json) == text

    def test_tiny_asymmetry_averaged(self):
        s = parse_matrix("1,0.5\n0.5000000000001,1\n")
        assert s[0, 1] == s[1, 0]

    @pytest.mark.parametrize("text, code", [
        ("1,0.5\n0.4,1\n", 65),
        ("1,2\n2,1\n", 65),
        ("1,2,3\n4,5,6\n", 65),
        ("not,a\nmatrix,!\n", 65),
        ('{"p": 3, "rows": [[1, 0], [0, 1]]}', 65),
        ("1,nan\nnan,1\n", 65),
    ])
    def test_bad_data(self, capsys, tmp_path, text, code):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        assert run(capsys, "decide", path)[0] == code

    def test_io_errors(self, capsys, tmp_path, ones4):
        assert run(capsys, "decide", tmp_path / "missing.csv")[0] == 74
        assert run(capsys, "decide", ones4, "--out", tmp_path / "no" / "dir.json")[0] == 74

    def test_usage_errors(self, capsys, ones4):
        assert run(capsys, "decide", "--m", 3, ones4)[0] == 64
        assert run(capsys, "frobnicate")[0] == 64
        assert run(capsys)[0] == 64
        assert run(capsys, "decide", "--tol-fit", "-1", ones4)[0] == 64
        assert run(capsys, "decide", "--restarts", "0", ones4)[0] == 64

    def test_stdin(self, ones4):
        proc = subprocess.run([sys.executable, "-m", "factorgate", "decide", "-"],
                              input=ones4.read_text(), capture_output=True, text=True)
        assert proc.returncode == 0 and json.loads(proc.stdout)["status"] == "member"
