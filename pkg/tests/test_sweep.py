"""Tests for the sweep engine, figure datasets, and the maximum search."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ekick.closed_forms import poisson_occupations
from ekick.sweep import (
    Axis,
    SweepSpec,
    fig1_dataset,
    fig2_dataset,
    fig3a_dataset,
    find_maximum,
    fock_decomposition_sweep,
    run_sweep,
)


class TestAxis:
    def test_linear_values(self):
        axis = Axis("rho", 0.5, 2.0, 4)
        assert_allclose(axis.values(), np.linspace(0.5, 2.0, 4), rtol=0, atol=0)

    def test_log_values(self):
        axis = Axis("p1lin", 0.1, 10.0, 3, scale="log")
        assert_allclose(axis.values(), [0.1, 1.0, 10.0], rtol=1e-14)

    def test_rejects_unknown_name(self):
        with pytest.raises(ValueError, match="unknown axis"):
            Axis("voltage", 0.0, 1.0, 2)

    def test_rejects_single_point(self):
        with pytest.raises(ValueError, match="count"):
            Axis("rho", 0.0, 1.0, 1)

    def test_rejects_empty_range(self):
        with pytest.raises(ValueError, match="maximum"):
            Axis("rho", 1.0, 1.0, 2)

    def test_rejects_unknown_scale(self):
        with pytest.raises(ValueError, match="scale"):
            Axis("rho", 0.1, 1.0, 2, scale="cubic")

    def test_log_scale_needs_positive_minimum(self):
        with pytest.raises(ValueError, match="log scale"):
            Axis("p1lin", 0.0, 1.0, 2, scale="log")


class TestSweepSpec:
    def test_rejects_unknown_solver(self):
        with pytest.raises(ValueError, match="unknown solver"):
            SweepSpec(solver="magic", axes=(Axis("p1lin", 0.0, 1.0, 2),))

    def test_needs_axes(self):
        with pytest.raises(ValueError, match="at least one axis"):
            SweepSpec(solver="pointlike", axes=())

    def test_rejects_duplicate_axes(self):
        with pytest.raises(ValueError, match="duplicate"):
            SweepSpec(
                solver="nonrecoil",
                axes=(Axis("rho", 0.1, 1.0, 2), Axis("rho", 0.2, 2.0, 2)),
                target_linear=1.0,
            )

    def test_needs_required_inputs(self):
        with pytest.raises(ValueError, match="needs 'rho'"):
            SweepSpec(solver="nonrecoil", axes=(Axis("p1lin", 0.1, 1.0, 2),))

    def test_pointlike_takes_single_probability_axis(self):
        with pytest.raises(ValueError, match="exactly one"):
            SweepSpec(
                solver="pointlike",
                axes=(Axis("p1lin", 0.0, 1.0, 2), Axis("rho", 0.1, 1.0, 2)),
            )

    def test_trajectory_export_is_nonrecoil_only(self):
        with pytest.raises(ValueError, match="nonrecoil"):
            SweepSpec(
                solver="recoil",
                axes=(Axis("energy_ratio", 2.0, 4.0, 2),),
                rho=0.2,
                target_linear=1.0,
                export_trajectory=True,
            )

    def test_rejects_unknown_grid_override(self):
        with pytest.raises(ValueError, match="grid overrides"):
            SweepSpec(
                solver="recoil",
                axes=(Axis("energy_ratio", 2.0, 4.0, 2),),
                rho=0.2,
                target_linear=1.0,
                grid_overrides={"spacing": 0.01},
            )

    def test_grid_points_row_major(self):
        spec = SweepSpec(
            solver="nonrecoil",
            axes=(Axis("rho", 0.1, 0.2, 2), Axis("p1lin", 1.0, 3.0, 3)),
        )
        points = spec.grid_points()
        assert [p["rho"] for p in points] == [0.1, 0.1, 0.1, 0.2, 0.2, 0.2]
        assert [p["p1lin"] for p in points] == [1.0, 2.0, 3.0, 1.0, 2.0, 3.0]

    def test_axis_value_overrides_fixed_parameter(self):
        spec = SweepSpec(
            solver="nonrecoil",
            axes=(Axis("p1lin", 1.0, 2.0, 2),),
            rho=0.3,
            target_linear=9.0,
        )
        points = spec.grid_points()
        assert all(p["rho"] == 0.3 for p in points)
        assert [p["p1lin"] for p in points] == [1.0, 2.0]

    def test_digest_tracks_content(self):
        base = dict(
            solver="nonrecoil",
            axes=(Axis("p1lin", 1.0, 2.0, 2),),
            rho=0.3,
        )
        assert SweepSpec(**base).digest() == SweepSpec(**base).digest()
        changed = SweepSpec(**{**base, "symmetry": "d_xz"})
        assert changed.digest() != SweepSpec(**base).digest()


class TestRunSweep:
    def test_pointlike_values(self):
        spec = SweepSpec(solver="pointlike", axes=(Axis("p1lin", 0.0, 4.0, 3),))
        result = run_sweep(spec, workers=1)
        assert len(result.records) == 3
        zero, two, four = result.records
        assert_allclose(zero["p1_with_backscatter"], 0.0, rtol=0, atol=0)
        assert_allclose(two["p1_with_backscatter"], 0.5, rtol=0, atol=1e-12)
        assert_allclose(four["p1_no_backscatter"], 1.0, rtol=0, atol=1e-12)
        for record in result.records:
            assert record["p1_boson_reference"] == record["p1lin"]

    def test_nonrecoil_records_are_unitary(self):
        spec = SweepSpec(
            solver="nonrecoil",
            axes=(
                Axis("rho", 0.2, 1.0, 2, scale="log"),
                Axis("p1lin", 0.5, 2.0, 2, scale="log"),
            ),
            symmetry="d_xz",
        )
        result = run_sweep(spec, workers=1)
        assert result.metadata["points"] == 4
        assert result.metadata["failures"] == 0
        for record in result.records:
            assert record["symmetry"] == "d_xz"
            assert record["converged"]
            assert_allclose(record["p0"] + record["p1"], 1.0, rtol=0, atol=1e-8)

    def test_linear_regime_tracks_target(self):
        # The quadratic correction at fixed linear probability grows as
        # the impact parameter shrinks (the coupling profile sharpens),
        # so the 2% linear-regime window is checked at moderate radii.
        for name in ("p_x", "p_z", "d_z2", "d_xz", "d_x2y2"):
            spec = SweepSpec(
                solver="nonrecoil",
                axes=(
                    Axis("rho", 0.2, 3.0, 4, scale="log"),
                    Axis("p1lin", 2e-4, 1e-3, 3, scale="log"),
                ),
                symmetry=name,
            )
            result = run_sweep(spec, workers=1)
            for record in result.records:
                assert abs(record["p1"] / record["p1lin"] - 1.0) <= 0.02

    def test_worker_pool_matches_inline(self):
        spec = SweepSpec(
            solver="nonrecoil",
            axes=(
                Axis("rho", 0.2, 0.8, 2),
                Axis("p1lin", 0.5, 2.0, 2),
            ),
        )
        inline = run_sweep(spec, workers=1)
        pooled = run_sweep(spec, workers=2)
        assert inline.records == pooled.records
        assert inline.metadata["spec_hash"] == pooled.metadata["spec_hash"]

    def test_env_worker_override_is_validated(self, monkeypatch):
        spec = SweepSpec(solver="pointlike", axes=(Axis("p1lin", 0.0, 1.0, 2),))
        monkeypatch.setenv("EKICK_WORKERS", "many")
        with pytest.raises(ValueError, match="EKICK_WORKERS"):
            run_sweep(spec)
        monkeypatch.setenv("EKICK_WORKERS", "0")
        with pytest.raises(ValueError, match="EKICK_WORKERS"):
            run_sweep(spec)
        monkeypatch.setenv("EKICK_WORKERS", "1")
        assert len(run_sweep(spec).records) == 2

    def test_point_failures_recorded_not_raised(self):
        # The lowest energy sits exactly at the excitation threshold,
        # where the solver refuses; the sweep keeps going.
        spec = SweepSpec(
            solver="recoil",
            axes=(Axis("energy_ratio", 1.0, 3.0, 2),),
            rho=0.2,
            target_linear=0.5,
        )
        result = run_sweep(spec, workers=1)
        assert result.metadata["failures"] == 1
        assert len(result.failures) == 1
        failed = result.failures[0]
        assert failed["energy_ratio"] == 1.0
        assert not failed["converged"]
        good = [r for r in result.records if "error" not in r]
        assert len(good) == 1
        assert 0.0 < good[0]["p1"] < 1.0

    def test_boson_nonrecoil_is_poissonian(self):
        spec = SweepSpec(
            solver="boson-nonrecoil",
            axes=(Axis("p1lin", 0.5, 2.0, 2),),
            rho=0.2,
        )
        result = run_sweep(spec, workers=1)
        for record in result.records:
            mean = record["p1lin"]
            assert record["mean"] == mean
            levels = sum(1 for key in record if key.startswith("p_"))
            expected = poisson_occupations(mean, levels)
            for n in range(levels):
                assert_allclose(record[f"p_{n}"], expected[n], rtol=0, atol=1e-13)


class TestFindMaximum:
    def test_rejects_empty_box(self):
        with pytest.raises(ValueError, match="nonempty"):
            find_maximum("p_x", rho_bounds=(0.5, 0.5))

    def test_rejects_nonpositive_edges(self):
        with pytest.raises(ValueError, match="positive"):
            find_maximum("p_x", rho_bounds=(0.0, 1.0))

    def test_locates_edge_maximum(self):
        # Complete excitation for this symmetry is approached as the
        # impact parameter shrinks, so the argmax pins to the box edge
        # and the optimal coupling sits near the point-kick value.
        result = find_maximum(
            "p_x",
            rho_bounds=(0.02, 0.1),
            p1lin_bounds=(2.0, 3.0),
            coarse=8,
            tolerance=1e-3,
        )
        assert result.attained
        assert result.probability >= 0.999
        assert result.rho == 0.02
        assert 2.3 <= result.target_linear <= 2.6
        assert result.evaluations >= 64
        assert result.trace[-1] == (
            result.rho,
            result.target_linear,
            result.probability,
        )
        assert result.box == ((0.02, 0.1), (2.0, 3.0))

    def test_refined_maximum_is_stable_against_grid_offset(self):
        # Re-seeding from a coarse grid with shifted nodes must land on
        # the same refined maximum.
        kwargs = dict(
            rho_bounds=(0.02, 0.1), p1lin_bounds=(2.0, 3.0), tolerance=1e-3
        )
        a = find_maximum("p_x", coarse=8, **kwargs)
        b = find_maximum("p_x", coarse=9, **kwargs)
        assert a.rho == b.rho
        assert abs(a.target_linear - b.target_linear) <= 3e-3
        assert abs(a.probability - b.probability) <= 1e-5

    def test_reports_nonattainment(self):
        result = find_maximum(
            "p_x",
            rho_bounds=(1.5, 2.0),
            p1lin_bounds=(0.2, 0.3),
            coarse=4,
            tolerance=1e-3,
        )
        assert not result.attained
        assert result.probability < 0.99


class TestFockDecomposition:
    def test_needs_two_distinct_ratios(self):
        with pytest.raises(ValueError, match="two distinct"):
            fock_decomposition_sweep((2.2,))
        with pytest.raises(ValueError, match="two distinct"):
            fock_decomposition_sweep((2.2, 2.2))

    def test_reference_columns_and_padding(self):
        result = fock_decomposition_sweep((1.9, 2.2), truncation=10)
        levels = result.metadata["level_columns"]
        reference = poisson_occupations(1.0, levels)
        for record in result.records:
            assert record["converged"]
            assert record["mean_nonrecoil"] == 1.0
            for n in range(levels):
                assert f"p_{n}" in record
                assert_allclose(
                    record[f"p_{n}_nonrecoil"], reference[n], rtol=0, atol=1e-13
                )

    def test_mean_oscillates_near_threshold(self):
        # Channel openings imprint oscillations on the mean occupation,
        # so the energy scan is non-monotonic: an interior local
        # minimum sits between the first two thresholds.
        result = fock_decomposition_sweep((1.3, 1.9, 2.2))
        means = [record["mean"] for record in result.records]
        assert means[1] < means[0]
        assert means[1] < means[2]

    def test_subthreshold_point_fails_cleanly(self):
        # Below threshold no linear probability can be prescribed, so
        # the point is recorded as a failure rather than a zero row.
        result = fock_decomposition_sweep((0.5, 2.2))
        assert result.metadata["failures"] == 1
        assert "below" in result.failures[0]["error"]


class TestFigureDatasets:
    def test_fig1_dataset(self):
        result = fig1_dataset(points=11, p1lin_max=10.0)
        assert len(result.records) == 11
        assert result.metadata["solver"] == "pointlike"
        assert result.records[0]["p1_with_backscatter"] == 0.0
        values = [r["p1lin"] for r in result.records]
        assert_allclose(values, np.linspace(0.0, 10.0, 11), rtol=0, atol=0)

    def test_fig2_dataset_small(self):
        result = fig2_dataset("p_z", rho_count=2, p1lin_count=2)
        assert result.metadata["solver"] == "nonrecoil"
        assert result.metadata["symmetry"] == "p_z"
        assert result.metadata["failures"] == 0
        for record in result.records:
            assert 0.0 <= record["p1"] <= 1.0 + 1e-8

    def test_fig3a_dataset_small(self):
        result = fig3a_dataset(ratio_count=2, p1lin_count=2)
        assert result.metadata["solver"] == "recoil"
        assert result.metadata["failures"] == 0
        for record in result.records:
            assert record["rho"] == 0.2
            assert {"p1", "p1_forward", "p1_backward", "eps_conv"} <= set(record)
