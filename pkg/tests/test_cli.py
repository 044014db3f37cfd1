import csv
import io
import subprocess
import sys

import pytest

from evtrigger import cli


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def quick(tmp_path):
    """Small-scenario argument prefix for characterize and sweep."""
    def make(command, name, *extra):
        out = tmp_path / name
        return [command, "--runs", "3", "--steps", "40", "--out", str(out), *extra], out
    return make


class TestCharacterize:
    def test_header_and_rows(self, quick):
        argv, out = quick("characterize", "c.csv", "--beta", "2,1000", "--alpha", "1,10,100")
        assert cli.main(argv) == cli.EXIT_OK
        rows = read(out)
        assert tuple(rows[0]) == cli.CHARACTERIZE_HEADER
        assert [(r[0], r[1]) for r in rows[1:]] == [(b, a) for b in ("2", "1000") for a in ("1", "10", "100")]
        assert all(r[4:] == ["3", "40", "0"] for r in rows[1:])

    def test_reference_point(self, tmp_path):
        out = tmp_path / "c.csv"
        argv = ["characterize", "--beta", "2", "--alpha", "1", "--runs", "100", "--steps", "500",
                "--seed", "7", "--out", str(out)]
        assert cli.main(argv) == 0
        rows = read(out)
        assert len(rows) == 2
        assert float(rows[1][2]) == pytest.approx(0.6496, abs=0.03)

    def test_nine_significant_digits(self, quick):
        argv, out = quick("characterize", "c.csv", "--beta", "3", "--alpha", "0.7")
        cli.main(argv)
        rate = read(out)[1][2]
        assert len(rate.replace("0.", "", 1).lstrip("0")) <= 9

    def test_stdout(self, quick, capsys):
        argv, out = quick("characterize", "unused.csv", "--beta", "2", "--alpha", "1")
        argv[argv.index("--out") + 1] = "-"
        assert cli.main(argv) == 0
        captured = capsys.readouterr()
        rows = list(csv.reader(io.StringIO(captured.out)))
        assert len(rows) == 2 and not out.exists()
        assert captured.err == ""

    def test_byte_identical_rerun(self, quick):
        a, out_a = quick("characterize", "a.csv", "--beta", "2,10", "--alpha", "0.5,5", "--seed", "3")
        b, out_b = quick("characterize", "b.csv", "--beta", "2,10", "--alpha", "0.5,5", "--seed", "3")
        cli.main(a)
        cli.main(b)
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_seed_changes_output(self, quick):
        a, out_a = quick("characterize", "a.csv", "--beta", "2", "--alpha", "1", "--seed", "1")
        b, out_b = quick("characterize", "b.csv", "--beta", "2", "--alpha", "1", "--seed", "2")
        cli.main(a)
        cli.main(b)
        assert out_a.read_bytes() != out_b.read_bytes()


class TestSweep:
    def test_header_rows_and_reference(self, quick):
        argv, out = quick("sweep", "s.csv", "--beta", "2", "--alpha", "1,5", "--estimators", "kf,sampling",
                          "--samples", "200")
        assert cli.main(argv) == 0
        rows = read(out)
        assert tuple(rows[0]) == cli.SWEEP_HEADER
        body = [dict(zip(rows[0], r)) for r in rows[1:]]
        assert [r["estimator"] for r in body] == ["kf", "sebkf", "sampling"] * 2
        for r in body:
            assert r["N"] == ("200" if r["estimator"] == "sampling" else "0")
            if r["estimator"] == "sebkf":
                assert float(r["relative_mse"]) == 1.0

    def test_byte_identical_rerun(self, quick):
        a, out_a = quick("sweep", "a.csv", "--beta", "10", "--alpha", "2", "--samples", "100")
        b, out_b = quick("sweep", "b.csv", "--beta", "10", "--alpha", "2", "--samples", "100")
        cli.main(a)
        cli.main(b)
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_starvation_exit_code(self, quick, capsys):
        argv, out = quick("sweep", "s.csv", "--beta", "2", "--alpha", "1", "--max-batches", "1",
                          "--samples-low-rate", "none")
        assert cli.main(argv) == cli.EXIT_STARVATION
        err = capsys.readouterr().err
        assert "beta=2" in err and "alpha_z=1" in err
        assert not out.exists()


class TestValidation:
    @pytest.mark.parametrize("extra", [
        ["--alpha", "0"], ["--alpha", "-1"], ["--beta", "0"], ["--beta", "x"], ["--runs", "0"],
        ["--steps", "-3"], ["--estimators", "none"], ["--estimators", "kf,ukf"], ["--policy", "always"],
        ["--bogus", "1"],
    ])
    def test_usage_errors(self, quick, extra, capsys):
        argv, out = quick("sweep", "s.csv", *extra)
        assert cli.main(argv) == cli.EXIT_USAGE
        assert "usage:" in capsys.readouterr().err
        assert not out.exists()

    def test_no_subcommand(self):
        assert cli.main([]) == cli.EXIT_USAGE

    def test_help_is_ok(self, capsys):
        assert cli.main(["sweep", "--help"]) == 0
        assert "--estimators" in capsys.readouterr().out

    def test_invalid_combination_from_validation(self, quick):
        argv, _ = quick("characterize", "c.csv", "--burn-in", "40")
        assert cli.main(argv) == cli.EXIT_USAGE

    def test_unwritable_output(self, tmp_path):
        out = tmp_path / "missing" / "c.csv"
        argv = ["characterize", "--beta", "2", "--alpha", "1", "--runs", "2", "--steps", "10", "--out", str(out)]
        assert cli.main(argv) == cli.EXIT_IO


class TestConfigFile:
    def test_file_then_flags(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text(
            "[DEFAULT]\nruns = 2\nsamples = 50\n\n"
            "[characterize]\nbeta = 2, 5\nalpha = 3\nsteps = 30\nseed = 9\n"
        )
        out = tmp_path / "c.csv"
        assert cli.main(["characterize", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == 0
        rows = read(out)
        assert [r[0] for r in rows[1:]] == ["2", "5"]
        assert all(r[1] == "3" and r[4:] == ["2", "30", "4"] for r in rows[1:])

    def test_unknown_key_in_section(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[characterize]\nsamples = 50\n")
        assert cli.main(["characterize", "--config", str(cfg), "--out", str(tmp_path / "c.csv")]) == 1

    def test_bad_value(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[sweep]\nruns = many\n")
        assert cli.main(["sweep", "--config", str(cfg)]) == 1

    def test_missing_file(self, tmp_path):
        assert cli.main(["sweep", "--config", str(tmp_path / "nope.ini")]) == cli.EXIT_IO

    def test_underscore_keys(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[characterize]\nbeta = 2\nalpha = 1\nruns = 2\nsteps = 20\nburn_in = 5\n")
        out = tmp_path / "c.csv"
        assert cli.main(["characterize", "--config", str(cfg), "--out", str(out)]) == 0
        assert len(read(out)) == 2


class TestOracleCheck:
    def test_defaults_pass(self, capsys):
        assert cli.main(["oracle-check"]) == cli.EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 4 and all(line.endswith("ok") for line in lines)

    def test_sebkf_line_at_beta_two(self, capsys, tmp_path):
        out = tmp_path / "o.csv"
        assert cli.main(["oracle-check", "--beta", "2", "--out", str(out)]) == 0
        header, *body = read(out)
        assert tuple(header) == cli.ORACLE_HEADER
        rows = [dict(zip(header, r)) for r in body]
        seb = [r for r in rows if r["method"] == "sebkf"][0]
        assert float(seb["mean_error"]) < 1e-3 and float(seb["var_error"]) < 1e-3
        assert "sebkf" in capsys.readouterr().out

    def test_tiny_grid_fails(self, capsys):
        assert cli.main(["oracle-check", "--beta", "10", "--samples", "1000", "--grid-halfwidth", "0.5"]) == 4
        assert "grid" in capsys.readouterr().err

    def test_mismatch_fails(self, capsys):
        # with two samples per step the sampled variance is far off the quadrature value
        assert cli.main(["oracle-check", "--beta", "10", "--samples", "2"]) == cli.EXIT_ORACLE
        assert "outside tolerance" in capsys.readouterr().err

    def test_rerun_identical(self, tmp_path):
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for p in paths:
            cli.main(["oracle-check", "--beta", "10", "--samples", "5000", "--out", str(p)])
        assert paths[0].read_bytes() == paths[1].read_bytes()


def test_console_entry_point(tmp_path):
    out = tmp_path / "c.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "evtrigger.cli", "characterize", "--beta", "2", "--alpha", "1",
         "--runs", "2", "--steps", "10", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "wrote 1 rows" in proc.stderr
