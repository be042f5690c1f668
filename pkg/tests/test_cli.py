"""End-to-end tests for the command line front end."""

import csv
import json

import numpy as np
import pytest

from densderiv import cli, estimate_at
from densderiv.cli import (
    ParseError,
    ingest_csv,
    parse_ns,
    parse_point,
    parse_queries,
    parse_rule,
)
from densderiv.densities import GaussianMixture
from densderiv.kernels import GaussianKernel


def write_lines(path, text):
    path.write_text(text)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture()
def data_file(tmp_path):
    rng = np.random.default_rng(42)
    data = rng.normal(size=(300, 2))
    path = tmp_path / "data.csv"
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows([[repr(float(v)) for v in row] for row in data])
    return str(path), data


class TestIngestCsv:
    def test_small_file(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", "0,0\n1,0\n0,1\n")
        got = ingest_csv(path)
        np.testing.assert_array_equal(got, [[0, 0], [1, 0], [0, 1]])

    def test_header_line_skipped(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", "a,b\n1,2\n3,4\n")
        np.testing.assert_array_equal(ingest_csv(path), [[1, 2], [3, 4]])

    def test_nan_row_cited_by_line(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", "1,2\n1,NaN\n3,4\n")
        with pytest.raises(ParseError, match=r"line\(s\) 2"):
            ingest_csv(path)

    def test_ragged_row_cited(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", "1,2\n3\n")
        with pytest.raises(ParseError, match="line 2"):
            ingest_csv(path)

    def test_non_numeric_cell_cited(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", "1,2\n3,x\n")
        with pytest.raises(ParseError, match="'x'"):
            ingest_csv(path)

    def test_empty_file(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", "")
        with pytest.raises(ParseError, match="no data"):
            ingest_csv(path)

    def test_blank_lines_ignored(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", "1,2\n\n3,4\n\n")
        assert ingest_csv(path).shape == (2, 2)

    def test_large_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(42)
        data = rng.normal(size=(100_000, 3))
        path = tmp_path / "big.csv"
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(
                [[repr(float(v)) for v in row] for row in data])
        np.testing.assert_array_equal(ingest_csv(str(path)), data)


class TestQueryParsing:
    def test_grid_enumerates_last_axis_fastest(self):
        got = parse_queries("grid:0:1:2,0:1:2", 2)
        np.testing.assert_array_equal(
            got, [[0, 0], [0, 1], [1, 0], [1, 1]])

    def test_one_dimensional_grid(self):
        got = parse_queries("grid:-1:1:3", 1)
        np.testing.assert_array_equal(got, [[-1.0], [0.0], [1.0]])

    def test_grid_validation(self):
        with pytest.raises(ParseError, match="min:max:count"):
            parse_queries("grid:0:1", 1)
        with pytest.raises(ParseError, match="min:max:count"):
            parse_queries("grid:0:1:x", 1)
        with pytest.raises(ParseError, match="at least one"):
            parse_queries("grid:0:1:0", 1)
        with pytest.raises(ParseError, match="axes"):
            parse_queries("grid:0:1:2", 2)
        with pytest.raises(ParseError, match="cap"):
            parse_queries("grid:0:1:4000,0:1:3000", 2)
        with pytest.raises(ParseError, match="grid:"):
            parse_queries("points:0,0", 2)

    def test_file_queries(self, tmp_path):
        path = write_lines(tmp_path / "q.csv", "0.1,0.2\n-0.3,0.4\n")
        got = parse_queries(f"file:{path}", 2)
        np.testing.assert_allclose(got, [[0.1, 0.2], [-0.3, 0.4]])
        with pytest.raises(ParseError, match="columns"):
            parse_queries(f"file:{path}", 3)

    def test_rule(self):
        assert parse_rule("n^{-1/10}") == pytest.approx(0.1)
        assert parse_rule("n^-1/8") == pytest.approx(0.125)
        with pytest.raises(ParseError):
            parse_rule("n^{-2/10}")
        with pytest.raises(ParseError):
            parse_rule("h=0.3")

    def test_ns(self):
        assert parse_ns("1e3:1e6") == [1000, 10000, 100000, 1000000]
        assert parse_ns("500,1000") == [500, 1000]
        with pytest.raises(ParseError, match="powers of ten"):
            parse_ns("2e3:1e6")
        with pytest.raises(ParseError, match="range"):
            parse_ns("1e6:1e3")

    def test_point(self):
        np.testing.assert_allclose(parse_point("0.3,-0.2", 2), [0.3, -0.2])
        with pytest.raises(ParseError, match="coordinates"):
            parse_point("0.3", 2)


class TestEstimateCommand:
    def run(self, argv):
        return cli.main(argv)

    def test_matches_library_row_by_row(self, tmp_path, data_file):
        path, data = data_file
        queries = write_lines(tmp_path / "q.csv",
                              "0.0,0.0\n0.4,0.3\n-0.2,0.5\n")
        out = tmp_path / "out.csv"
        code = self.run(["estimate", "--input", path, "--paradigm", "K",
                         "--h", "0.5", "--queries", f"file:{queries}",
                         "--out", str(out)])
        assert code == 0
        rows = read_rows(out)
        assert rows[0] == ["x1", "x2", "value", "grad1", "grad2",
                           "hess11", "hess12", "hess22", "flags", "error"]
        kernel = GaussianKernel(2)
        for row, q in zip(rows[1:], [[0.0, 0.0], [0.4, 0.3], [-0.2, 0.5]]):
            est = estimate_at("K", data, np.array(q), kernel, 0.5)
            assert float(row[2]) == pytest.approx(est.value, rel=1e-11)
            np.testing.assert_allclose(
                [float(c) for c in row[3:5]], est.gradient, rtol=1e-11)
            np.testing.assert_allclose(
                [float(c) for c in row[5:8]],
                est.hessian[np.triu_indices(2)], rtol=1e-11)
            assert row[9] == ""

    def test_failures_become_error_codes(self, tmp_path, data_file):
        path, _ = data_file
        queries = write_lines(tmp_path / "q.csv", "0.0,0.0\n3.4,-3.2\n")
        out = tmp_path / "out.csv"
        code = self.run(["estimate", "--input", path, "--paradigm", "M",
                         "--scale", "log", "--h", "0.5",
                         "--queries", f"file:{queries}", "--out", str(out)])
        assert code == 0
        rows = read_rows(out)
        good, bad = rows[1], rows[2]
        assert good[-1] == "" and good[2] != ""
        assert bad[-1] == "nonpositive_density"
        assert all(c == "" for c in bad[2:9])

    def test_likelihood_and_score_matching_agree(self, tmp_path, data_file):
        path, _ = data_file
        queries = write_lines(tmp_path / "q.csv",
                              "0.0,0.0\n0.5,-0.5\n-0.4,0.2\n")
        outs = {}
        for paradigm in ("L", "H"):
            out = tmp_path / f"{paradigm}.csv"
            assert self.run(["estimate", "--input", path,
                             "--paradigm", paradigm, "--h", "0.5",
                             "--queries", f"file:{queries}",
                             "--out", str(out)]) == 0
            outs[paradigm] = read_rows(out)[1:]
        for row_l, row_h in zip(outs["L"], outs["H"]):
            left = [float(c) for c in row_l[3:8]]
            right = [float(c) for c in row_h[3:8]]
            np.testing.assert_allclose(left, right, atol=1e-9)

    def test_grid_queries_and_log_scale(self, tmp_path, data_file):
        path, data = data_file
        out = tmp_path / "out.csv"
        assert self.run(["estimate", "--input", path, "--paradigm", "K",
                         "--scale", "log", "--h", "0.5",
                         "--queries", "grid:-0.5:0.5:3,-0.5:0.5:3",
                         "--out", str(out)]) == 0
        rows = read_rows(out)
        assert len(rows) == 10
        est = estimate_at("K", data, np.array([-0.5, -0.5]),
                          GaussianKernel(2), 0.5)
        assert float(rows[1][2]) == pytest.approx(np.log(est.value),
                                                  rel=1e-11)

    def test_deterministic_across_runs_and_jobs(self, tmp_path, data_file):
        path, _ = data_file
        queries = write_lines(tmp_path / "q.csv", "0.0,0.0\n0.4,0.3\n")
        argv = ["estimate", "--input", path, "--paradigm", "L", "--h", "0.5",
                "--queries", f"file:{queries}"]
        outs = []
        for name, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
            out = tmp_path / f"{name}.csv"
            assert self.run(argv + ["--out", str(out),
                                    "--jobs", jobs]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_json_sidecar_with_metadata(self, tmp_path, data_file):
        path, _ = data_file
        queries = write_lines(tmp_path / "q.csv", "0.0,0.0\n")
        out = tmp_path / "out.csv"
        sidecar = tmp_path / "out.json"
        assert self.run(["estimate", "--input", path, "--h", "0.5",
                         "--queries", f"file:{queries}", "--out", str(out),
                         "--json", str(sidecar)]) == 0
        payload = json.loads(sidecar.read_text())
        assert payload["columns"][0] == "x1"
        assert len(payload["rows"]) == 1
        meta = payload["metadata"]
        assert meta["config"]["h"] == "0.5"
        assert meta["config"]["paradigm"] == "M"
        assert "version" in meta

    def test_bad_options_exit_nonzero(self, tmp_path, data_file, capsys):
        path, _ = data_file
        queries = write_lines(tmp_path / "q.csv", "0,0\n")
        base = ["estimate", "--input", path, "--queries",
                f"file:{queries}", "--out", str(tmp_path / "o.csv")]
        assert self.run(base + ["--h", "0.5", "--paradigm", "Q"]) == 2
        assert "paradigm" in capsys.readouterr().err
        assert self.run(base) == 2  # missing --h
        assert "--h" in capsys.readouterr().err
        assert self.run(base + ["--h", "0.5", "--kernel", "box"]) == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0
        assert "densderiv" in capsys.readouterr().out


class TestConfigFile:
    def test_config_supplies_options_and_flags_override(self, tmp_path,
                                                        data_file):
        path, _ = data_file
        queries = write_lines(tmp_path / "q.csv", "0.0,0.0\n0.3,0.1\n")
        out_cfg = tmp_path / "from_config.csv"
        cfg = write_lines(tmp_path / "run.ini", f"""
[estimate]
input = {path}
h = 0.5
paradigm = K
queries = file:{queries}
out = {out_cfg}
""")
        assert cli.main(["estimate", "--config", cfg]) == 0
        assert len(read_rows(out_cfg)) == 3

        out_flag = tmp_path / "overridden.csv"
        assert cli.main(["estimate", "--config", cfg, "--h", "0.3",
                         "--out", str(out_flag)]) == 0
        out_direct = tmp_path / "direct.csv"
        assert cli.main(["estimate", "--input", path, "--paradigm", "K",
                         "--h", "0.3", "--queries", f"file:{queries}",
                         "--out", str(out_direct)]) == 0
        assert out_flag.read_bytes() == out_direct.read_bytes()
        assert out_flag.read_bytes() != out_cfg.read_bytes()

    def test_config_errors(self, tmp_path, data_file, capsys):
        path, _ = data_file
        cfg = write_lines(tmp_path / "bad.ini",
                          "[estimate]\nbandwidth = 0.5\n")
        assert cli.main(["estimate", "--config", cfg]) == 2
        assert "bandwidth" in capsys.readouterr().err
        assert cli.main(["estimate", "--config",
                         str(tmp_path / "missing.ini")]) == 2


class TestModesCommand:
    def test_two_component_mixture(self, tmp_path):
        mixture = GaussianMixture(
            [0.55, 0.45], [[-2.5, 0.0], [2.5, 0.0]],
            [0.8 * np.eye(2), 0.8 * np.eye(2)])
        data = mixture.sample(3000, rng=5)
        path = tmp_path / "mix.csv"
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(
                [[repr(float(v)) for v in row] for row in data])
        starts = write_lines(tmp_path / "starts.csv",
                             "-2.0,0.3\n-3.0,-0.4\n2.0,0.2\n3.0,0.0\n")
        out = tmp_path / "modes.csv"
        sidecar = tmp_path / "modes.json"
        assert cli.main(["modes", "--input", str(path), "--h", "0.45",
                         "--starts", f"file:{starts}", "--out", str(out),
                         "--json", str(sidecar)]) == 0
        rows = read_rows(out)
        assert rows[0] == ["x1", "x2", "log_density", "negative_definite",
                           "size"]
        assert len(rows) == 3
        first, second = rows[1], rows[2]
        # ordered by decreasing estimated log-density
        assert float(first[2]) > float(second[2])
        assert np.hypot(float(first[0]) + 2.5, float(first[1])) < 0.25
        assert np.hypot(float(second[0]) - 2.5, float(second[1])) < 0.25
        assert first[3] == second[3] == "true"
        assert first[4] == second[4] == "2"
        payload = json.loads(sidecar.read_text())
        assert payload["labels"] == [0, 0, 1, 1]
        assert payload["converged"] == [True] * 4


class TestRatesCommand:
    def run_rates(self, tmp_path, monkeypatch, subdir, seed="31"):
        workdir = tmp_path / subdir
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        code = cli.main(["rates", "--density", "normal1d",
                         "--paradigm", "K", "--target", "value",
                         "--rule", "n^{-1/5}", "--ns", "400,800",
                         "--reps", "100", "--seed", seed,
                         "--out", "report"])
        assert code == 0
        return workdir

    def test_writes_report_and_plot_files(self, tmp_path, monkeypatch):
        workdir = self.run_rates(tmp_path, monkeypatch, "a")
        rows = read_rows(workdir / "report.csv")
        assert rows[0] == ["paradigm", "target", "n", "h", "bias",
                           "stderr", "rmse"]
        assert [r[2] for r in rows[1:]] == ["400", "800"]
        assert all(np.isfinite(float(r[6])) for r in rows[1:])

        payload = json.loads((workdir / "report.json").read_text())
        assert payload["paradigm"] == "K"
        assert payload["metadata"]["config"]["rule"] == "n^{-1/5}"
        assert payload["metadata"]["seed"] == 31

        plot = read_rows(workdir / "report_plot.csv")
        assert plot[0] == ["paradigm", "target", "log10_n", "log10_rmse"]
        assert len(plot) == 3
        assert float(plot[1][2]) == pytest.approx(np.log10(400))

    def test_byte_identical_reruns(self, tmp_path, monkeypatch):
        first = self.run_rates(tmp_path, monkeypatch, "a")
        second = self.run_rates(tmp_path, monkeypatch, "b")
        for name in ("report.csv", "report.json", "report_plot.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_unknown_density(self, capsys):
        assert cli.main(["rates", "--density", "cauchy9d",
                         "--rule", "n^{-1/5}", "--ns", "400,800"]) == 2
        assert "cauchy9d" in capsys.readouterr().err


class TestCheckKernelCommand:
    def test_conforming_kernel_exits_zero(self, capsys):
        assert cli.main(["check-kernel", "--kernel", "gaussian"]) == 0
        out = capsys.readouterr().out
        assert "unit_mass" in out and "pass" in out

    def test_nonconforming_kernel_exits_one(self, capsys):
        assert cli.main(["check-kernel", "--kernel", "rectangular"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_unknown_kernel_exits_two(self, capsys):
        assert cli.main(["check-kernel", "--kernel", "witch-hat"]) == 2
        assert "witch-hat" in capsys.readouterr().err
