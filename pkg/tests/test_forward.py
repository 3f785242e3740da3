"""Reduced conduction model, external adapter, and run-table cache."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fd_oracle import solve_fd
from meltcal.domain import (
    CalibrationParams,
    DesignVars,
    MeltPoolSize,
    PhysicalConstants,
    bundled_dataset_path,
    load_dataset,
    prior_from_table2,
)
from meltcal.forward import (
    AdapterError,
    ExternalModelSpec,
    ReducedModelConfig,
    RunTable,
    effective_conductivity,
    evaluate_external,
    evaluate_reduced,
    lookup_or_evaluate,
    temperature_rise,
)

CONST = PhysicalConstants()
CFG = ReducedModelConfig()
NOMINAL = prior_from_table2().nominal_params()
COND1 = DesignVars(power=530.0, beam_radius=1.59e-4, pulse_duration=4e-3)


@pytest.fixture(scope="module")
def dataset():
    return load_dataset(bundled_dataset_path())


class TestTemperatureRise:
    def test_zero_time_is_ambient(self):
        t = temperature_rise(COND1, NOMINAL, CONST, CFG, 0.0, 0.0, 0.0)
        assert t == CONST.ambient_temperature

    def test_far_field_is_ambient(self):
        t = temperature_rise(COND1, NOMINAL, CONST, CFG, 0.0, 1.0,
                             10.0 * COND1.pulse_duration)
        assert abs(t - CONST.ambient_temperature) < 1e-9

    def test_negative_coordinates_rejected(self):
        with pytest.raises(ValueError):
            temperature_rise(COND1, NOMINAL, CONST, CFG, -1e-5, 0.0, 1e-3)

    def test_matches_fd_oracle_at_pulse_end(self):
        fd = solve_fd(COND1, NOMINAL, CONST, t_end=COND1.pulse_duration,
                      samples=1, cells_per_radius=16)
        t_fd = fd.temperature[0, 0]
        t_an = temperature_rise(COND1, NOMINAL, CONST, CFG, 0.0, 0.0,
                                COND1.pulse_duration)
        rise_fd = t_fd - CONST.ambient_temperature
        rise_an = t_an - CONST.ambient_temperature
        assert abs(rise_an - rise_fd) / rise_fd < 0.02

    def test_monotone_in_r_and_z(self):
        t_p = COND1.pulse_duration
        rs = np.linspace(0.0, 5e-4, 12)
        temps_r = [temperature_rise(COND1, NOMINAL, CONST, CFG, r, 0.0, t_p)
                   for r in rs]
        temps_z = [temperature_rise(COND1, NOMINAL, CONST, CFG, 0.0, z, t_p)
                   for z in rs]
        assert all(a >= b for a, b in zip(temps_r, temps_r[1:]))
        assert all(a >= b for a, b in zip(temps_z, temps_z[1:]))

    def test_linear_in_absorbed_power(self):
        """With losses off, doubling alpha*P doubles the rise everywhere."""
        cfg = dataclasses.replace(CFG, loss_correction=False)
        double = dataclasses.replace(COND1, power=2.0 * COND1.power)
        for (r, z, t) in [(0.0, 0.0, 4e-3), (2e-4, 0.0, 2e-3),
                          (0.0, 1e-4, 6e-3), (1e-4, 1e-4, 4e-3)]:
            rise1 = temperature_rise(COND1, NOMINAL, CONST, cfg, r, z, t) \
                - CONST.ambient_temperature
            rise2 = temperature_rise(double, NOMINAL, CONST, cfg, r, z, t) \
                - CONST.ambient_temperature
            assert rise2 == pytest.approx(2.0 * rise1, rel=1e-9)


class TestEffectiveConductivity:
    def test_increasing_in_gamma_t_magnitude(self):
        stronger = dataclasses.replace(NOMINAL, gamma_t=NOMINAL.gamma_t * 1.1)
        assert (effective_conductivity(COND1, stronger, CONST, CFG)
                > effective_conductivity(COND1, NOMINAL, CONST, CFG))

    def test_decreasing_in_viscosity(self):
        thicker = dataclasses.replace(NOMINAL, mu_l=NOMINAL.mu_l * 2.0)
        assert (effective_conductivity(COND1, thicker, CONST, CFG)
                < effective_conductivity(COND1, NOMINAL, CONST, CFG))


class TestEvaluateReduced:
    def test_vanishing_source_does_not_melt(self):
        weak = dataclasses.replace(COND1, power=1e-6)
        size = evaluate_reduced(weak, NOMINAL, CONST, CFG)
        assert size == MeltPoolSize(length=0.0, depth=0.0, melted=False)

    def test_monotone_in_alpha(self):
        low = dataclasses.replace(NOMINAL, alpha=0.135)
        high = dataclasses.replace(NOMINAL, alpha=0.405)
        s_low = evaluate_reduced(COND1, low, CONST, CFG)
        s_high = evaluate_reduced(COND1, high, CONST, CFG)
        assert s_high.length > s_low.length
        assert s_high.depth > s_low.depth

    def test_monotone_in_power(self, dataset):
        designs = dataset.design_matrix()
        base = DesignVars(*designs[4])
        more = dataclasses.replace(base, power=base.power * 1.3)
        s0 = evaluate_reduced(base, NOMINAL, CONST, CFG)
        s1 = evaluate_reduced(more, NOMINAL, CONST, CFG)
        assert s1.length >= s0.length and s1.depth >= s0.depth

    def test_condition_one_matches_fd_oracle(self):
        fd = solve_fd(COND1, NOMINAL, CONST, cells_per_radius=16)
        size = evaluate_reduced(COND1, NOMINAL, CONST, CFG)
        assert size.melted
        assert abs(size.length - fd.max_length()) / fd.max_length() < 0.05
        assert abs(size.depth - fd.max_depth()) / fd.max_depth() < 0.05

    def test_quadrature_converged(self, dataset):
        """Doubling the node count moves dims by < 0.5% at every condition."""
        fine = dataclasses.replace(CFG, quad_points=128)
        for row in dataset:
            s64 = evaluate_reduced(row.design, NOMINAL, CONST, CFG)
            s128 = evaluate_reduced(row.design, NOMINAL, CONST, fine)
            assert s128.length == pytest.approx(s64.length, rel=5e-3)
            assert s128.depth == pytest.approx(s64.depth, rel=5e-3)

    def test_all_conditions_melt_at_nominal(self, dataset):
        for row in dataset:
            assert evaluate_reduced(row.design, NOMINAL, CONST, CFG).melted


class TestReducedModelConfig:
    @pytest.mark.parametrize("kwargs", [
        {"quad_points": 8},
        {"search_tolerance": 1e-3},
        {"chi": -0.1},
        {"ma_ref": 0.0},
        {"solid_conductivity_fraction": 0.0},
        {"thermal_mass_fraction": 1.5},
    ])
    def test_invalid_config_rejected(self, kwargs):
        with pytest.raises(ValueError):
            ReducedModelConfig(**kwargs)


def _stub(tmp_path, body: str) -> ExternalModelSpec:
    script = tmp_path / "sim.sh"
    script.write_text("#!/bin/sh\n" + body + "\n")
    script.chmod(0o755)
    return ExternalModelSpec(command_template=f"{script} {{input}} {{output}}",
                             working_dir=tmp_path, timeout=10.0)


class TestExternalAdapter:
    def test_pass_through(self, tmp_path):
        spec = _stub(tmp_path, 'printf "length_mm=0.5\\ndepth_mm=0.2\\n" > "$2"')
        size = evaluate_external(spec, COND1, NOMINAL)
        assert size == MeltPoolSize(length=5e-4, depth=2e-4, melted=True)

    def test_nonzero_exit_status_reported(self, tmp_path):
        spec = _stub(tmp_path, "exit 3")
        with pytest.raises(AdapterError, match="status 3"):
            evaluate_external(spec, COND1, NOMINAL)

    def test_non_numeric_output_names_key(self, tmp_path):
        spec = _stub(tmp_path, 'printf "length_mm=abc\\ndepth_mm=0.2\\n" > "$2"')
        with pytest.raises(AdapterError, match="length_mm"):
            evaluate_external(spec, COND1, NOMINAL)

    def test_missing_output_file(self, tmp_path):
        spec = _stub(tmp_path, "true")
        with pytest.raises(AdapterError, match="no output"):
            evaluate_external(spec, COND1, NOMINAL)

    def test_input_file_reaches_simulator(self, tmp_path):
        # echo the absorbed-power inputs back through the protocol
        spec = _stub(tmp_path,
                     'grep -q "^alpha=0.27$" "$1" || exit 9\n'
                     'printf "length_mm=1\\ndepth_mm=1\\n" > "$2"')
        size = evaluate_external(spec, COND1, NOMINAL)
        assert size.melted

    def test_template_placeholders_required(self):
        with pytest.raises(ValueError):
            ExternalModelSpec(command_template="sim {input}")


class _CountingModel:
    def __init__(self):
        self.calls = 0

    def __call__(self, design, theta):
        self.calls += 1
        return MeltPoolSize(length=1e-4 * design.power / 100.0,
                            depth=5e-5, melted=True)


class TestRunTable:
    def test_miss_then_hit(self, tmp_path):
        table = RunTable(tmp_path / "runs.csv")
        model = _CountingModel()
        first = lookup_or_evaluate(table, model, COND1, NOMINAL)
        second = lookup_or_evaluate(table, model, COND1, NOMINAL)
        assert model.calls == 1
        assert first == second

    def test_replay_from_disk_without_fallback(self, tmp_path, dataset):
        path = tmp_path / "runs.csv"
        table = RunTable(path)
        model = _CountingModel()
        rng = np.random.default_rng(0)
        prior = prior_from_table2()
        thetas = [CalibrationParams.from_array(
            prior.lower() + rng.random(8) * (prior.upper() - prior.lower()))
            for _ in range(10)]
        for row in dataset:
            for theta in thetas:
                lookup_or_evaluate(table, model, row.design, theta)
        assert model.calls == 130

        replay = RunTable(path)
        assert len(replay) == 130
        fresh = _CountingModel()
        for row in dataset:
            for theta in thetas:
                lookup_or_evaluate(replay, fresh, row.design, theta)
        assert fresh.calls == 0

    @given(st.floats(100.0, 2000.0))
    @settings(max_examples=20, deadline=None)
    def test_key_is_stable_under_formatting(self, power):
        table = RunTable()
        design = DesignVars(power=power, beam_radius=2e-4, pulse_duration=3e-3)
        size = MeltPoolSize(length=1e-4, depth=1e-4, melted=True)
        table.store(design, NOMINAL, size)
        assert table.lookup(design, NOMINAL) == size
