"""Command line interface tests."""

import csv
import json
import math

import numpy as np
import pytest

from evsynth import cli, simgen


@pytest.fixture()
def strong_effect_csv(tmp_path):
    rng = np.random.default_rng(42)
    n = 150
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    y = 0.1 + 1.5 * x1 + 0.0 * x2 + rng.normal(size=n)
    path = tmp_path / "data.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("y", "x1", "x2"))
        for row in zip(y, x1, x2):
            w.writerow([f"{v:.8f}" for v in row])
    return path


class TestAnalyze:
    def test_strong_positive_effect_near_log2(self, strong_effect_csv, tmp_path,
                                              capsys):
        out = tmp_path / "rec.json"
        code = cli.main(["analyze", "--data", str(strong_effect_csv),
                         "--family", "gaussian", "--outcome", "y",
                         "--hypothesis", "x1 > 0", "--seed", "3",
                         "--out", str(out)])
        assert code == 0
        records = json.loads(out.read_text())
        assert len(records) == 1
        rec = records[0]
        assert rec["complexity"] == 0.5
        assert rec["fit"] > 0.999
        assert abs(rec["log_bf_iu"] - math.log(2.0)) < 0.01
        assert rec["family"] == "gaussian"
        assert rec["study_id"] == "data"
        assert "log_bf=" in capsys.readouterr().out

    def test_predictor_subset_and_study_id(self, strong_effect_csv, tmp_path):
        out = tmp_path / "rec.json"
        code = cli.main(["analyze", "--data", str(strong_effect_csv),
                         "--family", "gaussian", "--outcome", "y",
                         "--predictors", "x1", "--hypothesis", "x1 > 0",
                         "--seed", "3", "--study-id", "trial-1",
                         "--out", str(out)])
        assert code == 0
        rec = json.loads(out.read_text())[0]
        assert rec["study_id"] == "trial-1"

    def test_complement_alternative(self, strong_effect_csv, tmp_path):
        out = tmp_path / "rec.json"
        code = cli.main(["analyze", "--data", str(strong_effect_csv),
                         "--family", "gaussian", "--outcome", "y",
                         "--hypothesis", "x1 > 0", "--alternative",
                         "complement", "--seed", "3", "--out", str(out)])
        assert code == 0
        rec = json.loads(out.read_text())[0]
        assert rec["alternative"] == "complement"
        # the effect is strong enough that fit saturates at 1.0 exactly,
        # which makes the complement Bayes factor the +inf sentinel
        assert rec["fit"] == 1.0
        assert rec["log_bf_ic"] == "inf"

    def test_parse_error_exit_2(self, strong_effect_csv, tmp_path, capsys):
        code = cli.main(["analyze", "--data", str(strong_effect_csv),
                         "--family", "gaussian", "--outcome", "y",
                         "--hypothesis", "x1 >", "--seed", "3",
                         "--out", str(tmp_path / "r.json")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_file_exit_3(self, tmp_path, capsys):
        code = cli.main(["analyze", "--data", str(tmp_path / "absent.csv"),
                         "--family", "gaussian", "--outcome", "y",
                         "--hypothesis", "x1 > 0", "--seed", "3",
                         "--out", str(tmp_path / "r.json")])
        assert code == 3
        assert "error:" in capsys.readouterr().err

    def test_contradiction_exit_4(self, strong_effect_csv, tmp_path, capsys):
        code = cli.main(["analyze", "--data", str(strong_effect_csv),
                         "--family", "gaussian", "--outcome", "y",
                         "--hypothesis", "x1 > 0 & x1 < 0", "--seed", "3",
                         "--out", str(tmp_path / "r.json")])
        assert code == 4
        assert "error:" in capsys.readouterr().err

    def test_unknown_name_exit_2(self, strong_effect_csv, tmp_path):
        code = cli.main(["analyze", "--data", str(strong_effect_csv),
                         "--family", "gaussian", "--outcome", "y",
                         "--hypothesis", "zz > 0", "--seed", "3",
                         "--out", str(tmp_path / "r.json")])
        assert code == 2


def write_record(path, study_id, log_bf, fit, complexity):
    record = {
        "study_id": study_id, "hypothesis": "h1", "fit": fit,
        "complexity": complexity, "log_bf_iu": log_bf, "log_bf_ic": 0.0,
        "mc_se_fit": 0.0, "mc_se_complexity": 0.0, "mc_draws": 0,
        "family": "gaussian", "n": 100, "alternative": "unconstrained",
    }
    path.write_text(json.dumps([record]), encoding="utf-8")


class TestSynthesize:
    def test_worked_example_aggregate_08(self, tmp_path, capsys):
        # BF 0.2 * 2 * 2 = 0.8
        write_record(tmp_path / "s1.json", "s1", math.log(0.2), 0.1, 0.5)
        write_record(tmp_path / "s2.json", "s2", math.log(2.0), 0.5, 0.25)
        write_record(tmp_path / "s3.json", "s3", math.log(2.0), 0.5, 0.25)
        out = tmp_path / "summary.json"
        code = cli.main(["synthesize", "--records", str(tmp_path),
                         "--out", str(out)])
        assert code == 0
        summary = json.loads(out.read_text())
        assert math.isclose(math.exp(summary["aggregated_log_bf"]["h1"]), 0.8,
                            rel_tol=1e-12)
        assert summary["study_count"] == 3
        pmp = summary["pmps"]["h1"]
        assert math.isclose(pmp, 0.8 / 1.8, rel_tol=1e-12)
        assert "aggregated 3 studies" in capsys.readouterr().out

    def test_trail_csv(self, tmp_path):
        write_record(tmp_path / "s1.json", "s1", math.log(2.0), 0.5, 0.25)
        write_record(tmp_path / "s2.json", "s2", math.log(2.0), 0.5, 0.25)
        out = tmp_path / "summary.json"
        trail = tmp_path / "trail.csv"
        code = cli.main(["synthesize", "--records", str(tmp_path / "s1.json"),
                         str(tmp_path / "s2.json"), "--out", str(out),
                         "--trail", str(trail)])
        assert code == 0
        with open(trail, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["study_id"] == "s1"
        final = [r for r in rows if r["label"] == "h1"][-1]
        assert math.isclose(float(final["cumulative_log_bf"]),
                            math.log(4.0), rel_tol=1e-9)

    def test_custom_priors(self, tmp_path):
        write_record(tmp_path / "s1.json", "s1", 0.0, 0.5, 0.5)
        out = tmp_path / "summary.json"
        code = cli.main(["synthesize", "--records", str(tmp_path),
                         "--priors", "0.8,0.2", "--out", str(out)])
        assert code == 0
        summary = json.loads(out.read_text())
        assert math.isclose(summary["pmps"]["h1"], 0.8, rel_tol=1e-12)

    def test_duplicate_study_exit_4(self, tmp_path):
        write_record(tmp_path / "s1.json", "s1", 0.0, 0.5, 0.5)
        write_record(tmp_path / "s2.json", "s1", 0.0, 0.5, 0.5)
        code = cli.main(["synthesize", "--records", str(tmp_path),
                         "--out", str(tmp_path / "o.json")])
        assert code == 4

    def test_no_records_exit_3(self, tmp_path):
        (tmp_path / "empty").mkdir()
        code = cli.main(["synthesize", "--records", str(tmp_path / "empty"),
                         "--out", str(tmp_path / "o.json")])
        assert code == 3

    def test_sentinel_serialized_as_string(self, tmp_path):
        record = {
            "study_id": "s1", "hypothesis": "h1", "fit": 1.0,
            "complexity": 0.5, "log_bf_iu": "inf", "log_bf_ic": "inf",
            "mc_se_fit": 0.0, "mc_se_complexity": 0.0, "mc_draws": 0,
            "family": "gaussian", "n": 100, "alternative": "unconstrained",
        }
        (tmp_path / "s1.json").write_text(json.dumps([record]))
        out = tmp_path / "summary.json"
        code = cli.main(["synthesize", "--records", str(tmp_path),
                         "--out", str(out)])
        assert code == 0
        summary = json.loads(out.read_text())
        assert summary["aggregated_log_bf"]["h1"] == "inf"
        assert summary["pmps"]["h1"] == 1.0


class TestSimulate:
    def _run(self, tmp_path, name, extra=()):
        out = tmp_path / name
        code = cli.main(["simulate", "--sim", "3", "--iters", "2",
                         "--n", "50", "--r2", "0.25", "--seed", "9",
                         "--mc-draws", "2000", "--out", str(out), *extra])
        assert code == 0
        return out.read_bytes()

    def test_byte_identical_rerun(self, tmp_path):
        a = self._run(tmp_path, "a.csv")
        b = self._run(tmp_path, "b.csv")
        assert a == b

    def test_threads_do_not_change_output(self, tmp_path):
        a = self._run(tmp_path, "a.csv")
        c = self._run(tmp_path, "c.csv", extra=("--threads", "2"))
        assert a == c

    def test_csv_shape_and_aggregates(self, tmp_path):
        raw = self._run(tmp_path, "a.csv").decode()
        rows = list(csv.DictReader(raw.splitlines()))
        assert set(r["alternative"] for r in rows) == {"unconstrained",
                                                       "complement"}
        agg = [r for r in rows if r["study"] == ""]
        per_study = [r for r in rows if r["study"] != ""]
        # 2 iterations x 2 alternatives: 4 aggregates, 12 study rows
        assert len(agg) == 4
        assert len(per_study) == 12
        assert all(r["family"] == "gaussian+logit+probit" for r in agg)
        for row in agg:
            matching = [float(r["log_bf"]) for r in per_study
                        if r["iteration"] == row["iteration"]
                        and r["alternative"] == row["alternative"]]
            assert math.isclose(sum(matching), float(row["agg_log_bf"]),
                                rel_tol=1e-9, abs_tol=1e-9)

    def test_sequential_sim_row_count(self, tmp_path):
        out = tmp_path / "seq.csv"
        code = cli.main(["simulate", "--sim", "9", "--iters", "1",
                         "--n", "25", "--studies", "4", "--alternative",
                         "complement", "--seed", "2", "--mc-draws", "2000",
                         "--out", str(out)])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len([r for r in rows if r["study"] != ""]) == 4
        assert len([r for r in rows if r["study"] == ""]) == 1

    def test_decomposed_sim11_labels(self, tmp_path):
        out = tmp_path / "dec.csv"
        code = cli.main(["simulate", "--sim", "11", "--iters", "1",
                         "--n", "25", "--studies", "3", "--decomposed",
                         "--alternative", "complement", "--seed", "2",
                         "--mc-draws", "2000", "--out", str(out)])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        labels = set(r["hypothesis"] for r in rows)
        assert labels == {"x2>0", "x3>0", "x4>0"}

    def test_skip_sidecar_written(self, tmp_path, monkeypatch, capsys):
        def explode(spec, rng=None, probe=None, max_redraws=100,
                    return_probe=False):
            raise simgen.PersistentSeparationError("separation persisted")

        monkeypatch.setattr(cli.simgen, "gen_dataset", explode)
        out = tmp_path / "skipped.csv"
        code = cli.main(["simulate", "--sim", "3", "--iters", "1",
                         "--n", "50", "--r2", "0.25", "--seed", "9",
                         "--out", str(out)])
        assert code == 0
        sidecar = tmp_path / "skipped.csv.skips.json"
        assert sidecar.exists()
        skips = json.loads(sidecar.read_text())
        assert skips[0]["iteration"] == 0
        assert "separation" in skips[0]["reason"]
        assert "skipped" in capsys.readouterr().err

    def test_float_format_ten_digits(self, tmp_path):
        raw = self._run(tmp_path, "fmt.csv").decode()
        for row in csv.DictReader(raw.splitlines()):
            for key in ("fit", "complexity", "log_bf", "agg_log_bf", "pmp"):
                value = row[key]
                if value and "." in value:
                    mantissa = value.lstrip("-").replace(".", "")
                    mantissa = mantissa.split("e")[0].lstrip("0")
                    assert len(mantissa) <= 10


class TestReport:
    def _simulate(self, tmp_path):
        out = tmp_path / "sim.csv"
        code = cli.main(["simulate", "--sim", "3", "--iters", "3",
                         "--n", "50", "--r2", "0.25", "--seed", "4",
                         "--mc-draws", "2000", "--out", str(out)])
        assert code == 0
        return out

    def test_quantile_summary(self, tmp_path):
        sim_csv = self._simulate(tmp_path)
        out = tmp_path / "report.csv"
        code = cli.main(["report", "--in", str(sim_csv), "--out", str(out)])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2  # two alternatives, one condition
        for row in rows:
            assert row["iterations"] == "3"
            values = [float(row[k]) for k in ("min_log_bf", "q25_log_bf",
                                              "median_log_bf", "q75_log_bf",
                                              "max_log_bf")]
            assert values == sorted(values)

    def test_identical_rows_collapse_quantiles(self, tmp_path):
        path = tmp_path / "flat.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cli.RESULT_COLUMNS)
            for it in range(4):
                w.writerow(("3", "gaussian", "100", "0.25", str(it), "",
                            "h", "unconstrained", "", "", "", "1.5", "0.8"))
        out = tmp_path / "report.csv"
        assert cli.main(["report", "--in", str(path), "--out", str(out)]) == 0
        with open(out, newline="") as fh:
            row = next(csv.DictReader(fh))
        for key in ("min_log_bf", "q25_log_bf", "median_log_bf",
                    "q75_log_bf", "max_log_bf"):
            assert row[key] == "1.5"
        assert row["mean_pmp"] == "0.8"

    def test_missing_columns_exit_3(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        code = cli.main(["report", "--in", str(path),
                         "--out", str(tmp_path / "r.csv")])
        assert code == 3


class TestParserPlumbing:
    def test_no_command_prints_help(self, capsys):
        assert cli.main([]) == 2
        assert "usage" in capsys.readouterr().out.lower()

    def test_bad_fraction_rejected(self, tmp_path):
        with pytest.raises(SystemExit):
            cli.main(["analyze", "--data", "x.csv", "--family", "gaussian",
                      "--outcome", "y", "--hypothesis", "a > 0",
                      "--fraction", "1.5", "--seed", "1",
                      "--out", str(tmp_path / "r.json")])

    def test_negative_seed_rejected(self, tmp_path):
        with pytest.raises(SystemExit):
            cli.main(["analyze", "--data", "x.csv", "--family", "gaussian",
                      "--outcome", "y", "--hypothesis", "a > 0",
                      "--seed", "-1", "--out", str(tmp_path / "r.json")])
