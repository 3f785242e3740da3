"""Domain types, dataset I/O, prior construction, and random streams."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meltcal.domain import (
    CalibrationParams,
    DatasetFormatError,
    DesignVars,
    ExperimentalDataset,
    MeltPoolSize,
    PARAM_NAMES,
    PriorEntry,
    PriorSpec,
    RandomStream,
    bundled_dataset_path,
    in_support,
    load_dataset,
    prior_from_table2,
    write_dataset,
)

HEADER = "index,power_W,beam_radius_mm,pulse_ms,length_mm,depth_mm"


@pytest.fixture(scope="module")
def bundled():
    return load_dataset(bundled_dataset_path())


class TestLoadDataset:
    def test_row_one_values(self, bundled):
        row = bundled.rows[0]
        assert row.design.power == 530.0
        assert row.design.beam_radius == pytest.approx(1.59e-4)
        assert row.design.pulse_duration == pytest.approx(4e-3)
        assert row.length == pytest.approx(6.25e-4)
        assert row.depth == pytest.approx(1.90e-4)

    def test_row_thirteen_values(self, bundled):
        row = bundled.rows[12]
        assert row.design.power == 1967.0
        assert row.length == pytest.approx(1.027e-3)
        assert row.depth == pytest.approx(2.12e-4)

    def test_bundled_has_thirteen_rows(self, bundled):
        assert len(bundled) == 13

    def test_rows_in_file_order(self, bundled):
        assert [r.index for r in bundled] == list(range(1, 14))

    def test_header_only_file(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text(HEADER + "\n")
        with pytest.raises(DatasetFormatError, match="no data rows"):
            load_dataset(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "nothing.csv"
        p.write_text("")
        with pytest.raises(DatasetFormatError, match="empty"):
            load_dataset(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("index,power_W,pulse_ms,length_mm,depth_mm\n1,530,4,0.6,0.2\n")
        with pytest.raises(DatasetFormatError, match="header"):
            load_dataset(p)

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        p = tmp_path / "nan.csv"
        p.write_text(HEADER + "\n1,530,oops,4,0.625,0.190\n")
        with pytest.raises(DatasetFormatError, match="row 2.*beam_radius_mm"):
            load_dataset(p)

    def test_non_positive_measurement(self, tmp_path):
        p = tmp_path / "neg.csv"
        p.write_text(HEADER + "\n1,530,0.159,4,-0.625,0.190\n")
        with pytest.raises(DatasetFormatError, match="non-positive"):
            load_dataset(p)

    def test_sigma_columns_captured(self, tmp_path):
        p = tmp_path / "sig.csv"
        p.write_text(HEADER + ",length_sigma_mm,depth_sigma_mm\n"
                     "1,530,0.159,4,0.625,0.190,0.03,0.01\n")
        row = load_dataset(p).rows[0]
        assert row.length_sigma == pytest.approx(3e-5)
        assert row.depth_sigma == pytest.approx(1e-5)

    def test_round_trip_preserves_numeric_content(self, bundled, tmp_path):
        out = tmp_path / "roundtrip.csv"
        write_dataset(bundled, out)
        back = load_dataset(out)
        for a, b in zip(bundled, back):
            assert b.design.power == pytest.approx(a.design.power, rel=1e-12)
            assert b.design.beam_radius == pytest.approx(a.design.beam_radius, rel=1e-12)
            assert b.length == pytest.approx(a.length, rel=1e-12)
            assert b.depth == pytest.approx(a.depth, rel=1e-12)


class TestPrior:
    def test_alpha_interval(self):
        prior = prior_from_table2()
        assert prior.entries[0].interval == pytest.approx((0.135, 0.405))

    def test_gamma_t_interval_sorted(self):
        prior = prior_from_table2()
        lo, hi = prior.entries[PARAM_NAMES.index("gamma_t")].interval
        assert lo == pytest.approx(-4.73e-4)
        assert hi == pytest.approx(-3.87e-4)

    def test_mu_l_interval(self):
        prior = prior_from_table2()
        lo, hi = prior.entries[PARAM_NAMES.index("mu_l")].interval
        assert (lo, hi) == pytest.approx((0.05, 0.2))

    def test_intervals_contain_nominal(self):
        prior = prior_from_table2()
        assert np.all(prior.lower() <= prior.nominal())
        assert np.all(prior.nominal() <= prior.upper())

    def test_uniform_std(self):
        prior = prior_from_table2()
        expected = (prior.upper() - prior.lower()) / np.sqrt(12.0)
        np.testing.assert_allclose(prior.std(), expected)

    def test_bad_multipliers_rejected(self):
        with pytest.raises(ValueError):
            PriorEntry(name="alpha", nominal=0.27, lower_mult=1.5, upper_mult=0.5)


class TestInSupport:
    def test_nominal_inside(self):
        prior = prior_from_table2()
        assert in_support(prior.nominal_params(), prior)

    def test_alpha_above_bound(self):
        prior = prior_from_table2()
        theta = dataclasses.replace(prior.nominal_params(), alpha=0.406)
        assert not in_support(theta, prior)

    def test_boundary_is_inside(self):
        prior = prior_from_table2()
        theta = dataclasses.replace(prior.nominal_params(), alpha=0.405)
        assert in_support(theta, prior)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_shrinking_intervals_is_monotone(self, seed):
        """A point rejected by the wide prior stays rejected by any shrunk one."""
        prior = prior_from_table2()
        rng = RandomStream(seed).generator()
        span = prior.upper() - prior.lower()
        vals = prior.lower() - 0.5 * span + 2.0 * span * rng.random(8)
        try:
            theta = CalibrationParams.from_array(vals)
        except ValueError:
            return  # draw violated a type invariant, not a support question
        shrunk = PriorSpec(entries=tuple(
            dataclasses.replace(e,
                                lower_mult=e.lower_mult + 0.05 * (e.upper_mult - e.lower_mult),
                                upper_mult=e.upper_mult - 0.05 * (e.upper_mult - e.lower_mult))
            for e in prior.entries))
        if not in_support(theta, prior):
            assert not in_support(theta, shrunk)


class TestCalibrationParams:
    @given(st.lists(st.floats(0.01, 10.0), min_size=8, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_array_round_trip(self, mults):
        prior = prior_from_table2()
        vals = prior.nominal() * np.clip(mults, 0.5, 1.5)
        theta = CalibrationParams.from_array(vals)
        np.testing.assert_array_equal(theta.as_array(), vals)

    def test_positive_gamma_t_rejected(self):
        prior = prior_from_table2()
        with pytest.raises(ValueError):
            dataclasses.replace(prior.nominal_params(), gamma_t=4.3e-4)


class TestMeltPoolSize:
    def test_unmelted_forces_zero_dims(self):
        with pytest.raises(ValueError):
            MeltPoolSize(length=1e-4, depth=0.0, melted=False)

    def test_melted_requires_positive_dims(self):
        with pytest.raises(ValueError):
            MeltPoolSize(length=0.0, depth=1e-4, melted=True)

    def test_melted_requires_finite_dims(self):
        with pytest.raises(ValueError):
            MeltPoolSize(length=np.inf, depth=1e-4, melted=True)


class TestRandomStream:
    def test_same_key_same_draws(self):
        a = RandomStream(42, 7).generator().random(10_000)
        b = RandomStream(42, 7).generator().random(10_000)
        np.testing.assert_array_equal(a, b)

    def test_different_ids_differ(self):
        a = RandomStream(42, 0).generator().random(100)
        b = RandomStream(42, 1).generator().random(100)
        assert not np.array_equal(a, b)

    def test_split_is_deterministic(self):
        assert RandomStream(3).split(5) == RandomStream(3).split(5)
        assert RandomStream(3).split(5) != RandomStream(3).split(6)

    @given(st.integers(0, 2**63 - 1), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_split_keeps_seed(self, seed, idx):
        child = RandomStream(seed).split(idx)
        assert child.seed == seed


class TestDesignVars:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            DesignVars(power=0.0, beam_radius=1e-4, pulse_duration=1e-3)


class TestDatasetValidation:
    def test_duplicate_indices_rejected(self, bundled):
        with pytest.raises(ValueError):
            ExperimentalDataset(rows=(bundled.rows[0], bundled.rows[0]))
