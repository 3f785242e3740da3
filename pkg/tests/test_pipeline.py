"""Orchestration: configuration, staging, caching, reports, plots, CLI."""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from meltcal.cli import main as cli_main
from meltcal.doe import build_training_set
from meltcal.domain import (
    ExperimentRow,
    ExperimentalDataset,
    PARAM_NAMES,
    RandomStream,
    bundled_dataset_path,
    load_dataset,
    prior_from_table2,
    write_dataset,
)
from meltcal.forward import reduced_model
from meltcal.inference import adaptive_metropolis, burn_thin
from meltcal.pipeline import (
    McmcConfig,
    Pipeline,
    RunConfig,
    emit_plots,
    run_calibration,
    validate_at_point,
)

PRIOR = prior_from_table2()


def small_config(out_dir: Path, **overrides) -> RunConfig:
    kwargs = dict(out_dir=str(out_dir), samples_per_condition=4, sa_n_base=256,
                  mcmc=McmcConfig(steps=1_500, burn=500, thin=10, adapt_start=100),
                  seed=7)
    kwargs.update(overrides)
    return RunConfig(**kwargs)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_config(out)
    report = run_calibration(cfg)
    return cfg, report


def _report_sans_timestamp(path: Path) -> dict:
    doc = json.loads(path.read_text())
    doc["provenance"].pop("timestamp")
    return doc


class TestRunConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = small_config(tmp_path)
        path = tmp_path / "cfg.json"
        cfg.to_json(path)
        assert RunConfig.from_json(path).to_dict() == cfg.to_dict()

    def test_missing_dataset_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            small_config(tmp_path, dataset_path=str(tmp_path / "nope.csv"))

    def test_model_selection_validated(self, tmp_path):
        with pytest.raises(ValueError):
            small_config(tmp_path, model="quantum")
        with pytest.raises(ValueError):
            small_config(tmp_path, model="external")

    def test_counts_validated(self, tmp_path):
        with pytest.raises(ValueError):
            small_config(tmp_path, samples_per_condition=1)
        with pytest.raises(ValueError):
            McmcConfig(steps=100, burn=10, thin=1, adapt_start=100)


class TestValidateAtPoint:
    def test_self_consistent_synthetic_data(self, tmp_path):
        model = reduced_model()
        theta = PRIOR.nominal_params()
        base = load_dataset(bundled_dataset_path())
        rows = tuple(ExperimentRow(index=r.index, design=r.design,
                                   length=model(r.design, theta).length,
                                   depth=model(r.design, theta).depth)
                     for r in base)
        synth = ExperimentalDataset(rows=rows)
        tab = validate_at_point(theta, synth, model)
        assert tab["average_length_error_mm"] == pytest.approx(0.0, abs=1e-9)
        assert tab["average_depth_error_mm"] == pytest.approx(0.0, abs=1e-9)

    def test_perturbed_alpha_gives_positive_errors(self):
        model = reduced_model()
        theta = PRIOR.nominal_params()
        base = load_dataset(bundled_dataset_path())
        rows = tuple(ExperimentRow(index=r.index, design=r.design,
                                   length=model(r.design, theta).length,
                                   depth=model(r.design, theta).depth)
                     for r in base)
        synth = ExperimentalDataset(rows=rows)
        bumped = dataclasses.replace(theta, alpha=theta.alpha + 0.1)
        tab = validate_at_point(bumped, synth, model)
        assert all(r["length_error_mm"] > 0 for r in tab["rows"])


class TestRunCalibration:
    def test_artifacts_written(self, small_run):
        cfg, _ = small_run
        out = Path(cfg.out_dir)
        for name in ("training_set.csv", "gp_length.json", "gp_depth.json",
                     "surrogate_quality.json", "sensitivity.json",
                     "sensitivity.csv", "chain.csv", "posterior.json",
                     "validation_errors.json", "report.json"):
            assert (out / name).exists(), name

    def test_report_averages_recompute_from_rows(self, small_run):
        _, report = small_run
        for point in ("prior_nominal", "posterior_mean"):
            tab = report["validation"][point]
            avg = np.mean([r["length_error_mm"] for r in tab["rows"]])
            assert tab["average_length_error_mm"] == pytest.approx(avg, rel=1e-12)

    def test_in_sample_label_present(self, small_run):
        _, report = small_run
        assert "in-sample" in report["validation"]["note"]

    def test_rerun_is_deterministic(self, small_run, tmp_path):
        cfg, _ = small_run
        cfg2 = dataclasses.replace(cfg, out_dir=str(tmp_path / "again"), threads=3)
        run_calibration(cfg2)
        a = _report_sans_timestamp(Path(cfg.out_dir) / "report.json")
        b = _report_sans_timestamp(Path(cfg2.out_dir) / "report.json")
        assert a == b

    def test_deleting_chain_reuses_gp_bytes(self, small_run):
        cfg, _ = small_run
        out = Path(cfg.out_dir)
        gp_before = (out / "gp_length.json").read_bytes()
        chain_before = (out / "chain.csv").read_bytes()
        (out / "chain.csv").unlink()
        run_calibration(cfg)
        assert (out / "gp_length.json").read_bytes() == gp_before
        assert (out / "chain.csv").read_bytes() == chain_before

    def test_stale_stage_recomputed_on_config_change(self, small_run, tmp_path):
        cfg, _ = small_run
        out = tmp_path / "reseeded"
        import shutil
        shutil.copytree(cfg.out_dir, out)
        cfg2 = dataclasses.replace(cfg, out_dir=str(out), seed=8)
        p = Pipeline(cfg2)
        ts_a = p.design()
        ts_b = Pipeline(small_config(Path(cfg.out_dir))).design()
        assert not np.array_equal(ts_a.inputs_raw, ts_b.inputs_raw)


class TestEmitPlots:
    def test_pairs_grid_panel_counts(self, small_run):
        cfg, _ = small_run
        svg = (Path(cfg.out_dir) / "posterior_pairs.svg").read_text()
        assert svg.count('stroke="#999"') == 8 + 28

    def test_parity_has_reference_line(self, small_run):
        cfg, _ = small_run
        svg = (Path(cfg.out_dir) / "parity_length.svg").read_text()
        assert "stroke-dasharray" in svg

    def test_every_figure_has_a_csv_twin(self, small_run):
        cfg, _ = small_run
        out = Path(cfg.out_dir)
        for svg in out.glob("*.svg"):
            assert svg.with_suffix(".csv").exists(), svg.name

    def test_trace_and_acf_per_parameter(self, small_run):
        cfg, _ = small_run
        out = Path(cfg.out_dir)
        for name in PARAM_NAMES:
            assert (out / f"trace_{name}.svg").exists()
            assert (out / f"acf_{name}.svg").exists()

    def test_empty_chain_rejected(self, small_run, tmp_path):
        cfg, report = small_run
        chain = adaptive_metropolis(lambda x: -0.5 * float(x @ x), np.zeros(2),
                                    200, 100, RandomStream(0))
        empty = burn_thin(chain, 199, 1)
        empty = dataclasses.replace(empty, samples=empty.samples[:0],
                                    log_post=empty.log_post[:0],
                                    accepted=empty.accepted[:0])
        dataset = load_dataset(bundled_dataset_path())
        with pytest.raises(ValueError, match="empty"):
            emit_plots(report, empty, dataset, tmp_path)


class TestCli:
    def test_design_succeeds(self, tmp_path):
        cfg = small_config(tmp_path / "out")
        cfg_path = tmp_path / "cfg.json"
        cfg.to_json(cfg_path)
        result = CliRunner().invoke(cli_main, ["design", "--config", str(cfg_path)])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "training_set.csv").exists()

    def test_missing_config_reports_io_error(self):
        result = CliRunner().invoke(cli_main, ["design", "--config", "/nope.json"])
        assert result.exit_code == 1
        try:
            err = result.stderr
        except ValueError:  # older click merges the streams
            err = result.output
        assert err.startswith("error:io:")
        assert len(err.strip().splitlines()) == 1

    def test_env_var_overrides_out_dir(self, tmp_path):
        cfg = small_config(tmp_path / "ignored")
        cfg_path = tmp_path / "cfg.json"
        cfg.to_json(cfg_path)
        env_out = tmp_path / "env_out"
        result = CliRunner().invoke(cli_main, ["design", "--config", str(cfg_path)],
                                    env={"MELTCAL_OUT": str(env_out)})
        assert result.exit_code == 0, result.output
        assert (env_out / "training_set.csv").exists()

    def test_out_flag_beats_env_var(self, tmp_path):
        cfg = small_config(tmp_path / "ignored")
        cfg_path = tmp_path / "cfg.json"
        cfg.to_json(cfg_path)
        flag_out = tmp_path / "flag_out"
        result = CliRunner().invoke(
            cli_main, ["design", "--config", str(cfg_path), "--out", str(flag_out)],
            env={"MELTCAL_OUT": str(tmp_path / "env_out2")})
        assert result.exit_code == 0, result.output
        assert (flag_out / "training_set.csv").exists()

    def test_all_subcommands_registered(self):
        result = CliRunner().invoke(cli_main, ["--help"])
        for name in ("design", "train", "validate-surrogate", "sa",
                     "calibrate", "validate", "report", "run-all"):
            assert name in result.output
