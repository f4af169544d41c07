import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armik.datagen import FamilySpec, generate_config_dataset, sample_family_configs
from armik.evaluation import (
    EvalReport,
    convex_angle_distance,
    export_analysis,
    half_turn_fold_distance,
    load_histogram,
    pose_errors,
    r_squared,
    r_squared_per_joint,
    workspace_errors,
    worst_case_analysis,
)
from armik.mpnn import build_model
from armik.seeding import substream
from armik.training import TrainConfig, prepare_arrays, train


@pytest.fixture(scope="module")
def ds3():
    spec = FamilySpec(dof=3, n_configs=1, samples_per_config=1, seed=4242)
    config = sample_family_configs(spec)[0]
    return generate_config_dataset(config, 400, substream(4242, "eval-tests"), {"config": "c0", "role": "test"})


@pytest.fixture(scope="module")
def trained(ds3):
    spec = FamilySpec(dof=3, n_configs=2, samples_per_config=800, seed=4343)
    from armik.datagen import generate_family

    fam = generate_family(spec, val_configs=0, val_samples=0)
    train_sets = [fam.datasets[n] for n in fam.splits["train"]]
    data = prepare_arrays(train_sets, "RG", "N", substream(7, "reference-angles"))
    cfg = TrainConfig(
        mode="RG",
        connectivity="N",
        dof=3,
        hidden_layers=2,
        hidden_units=22,
        batch_size=400,
        max_epochs=40,
        patience=40,
        seed=7,
    )
    model = build_model("RG", "N", 3, 2, 22, substream(7, "init"))
    model, _ = train(model, data, cfg)
    return model


class TestRSquared:
    def test_perfect(self):
        t = np.arange(12.0).reshape(4, 3)
        assert r_squared(t, t) == 1.0

    def test_mean_prediction_is_zero(self):
        rng = substream(1, "r2")
        t = rng.normal(size=(50, 3))
        pred = np.full_like(t, t.mean())
        assert r_squared(pred, t) == pytest.approx(0.0, abs=1e-12)

    def test_matches_textbook_two_pass_oracle(self):
        rng = substream(2, "r2")
        pred = rng.normal(size=(40, 2))
        t = rng.normal(size=(40, 2))
        mean = sum(v for v in t.ravel()) / t.size
        ss_tot = sum((v - mean) ** 2 for v in t.ravel())
        ss_res = sum((p - v) ** 2 for p, v in zip(pred.ravel(), t.ravel()))
        assert r_squared(pred, t) == pytest.approx(1 - ss_res / ss_tot, abs=1e-12)

    def test_shift_invariance(self):
        rng = substream(3, "r2")
        pred = rng.normal(size=30)
        t = rng.normal(size=30)
        assert r_squared(pred + 5.0, t + 5.0) == pytest.approx(r_squared(pred, t), abs=1e-9)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            r_squared(np.zeros(5), np.ones(5))

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            r_squared(np.array([1.0]), np.array([2.0]))

    def test_per_joint(self):
        rng = substream(4, "r2")
        t = rng.normal(size=(50, 3))
        per = r_squared_per_joint(t, t)
        assert np.all(per == 1.0)


class TestConvexAngle:
    def test_wrap_case(self):
        assert convex_angle_distance(0.0, 350.0) == 10.0

    def test_coincident(self):
        assert convex_angle_distance(90.0, 90.0) == 0.0

    def test_antipodal_maximum(self):
        assert convex_angle_distance(10.0, 190.0) == 180.0

    def test_symmetry_range_periodicity_bulk(self):
        rng = substream(5, "convex")
        a = rng.uniform(-1000, 1000, 1_000_000)
        b = rng.uniform(-1000, 1000, 1_000_000)
        d1 = convex_angle_distance(a, b)
        d2 = convex_angle_distance(b, a)
        assert np.array_equal(d1, d2)
        assert d1.min() >= 0.0 and d1.max() <= 180.0
        k = rng.integers(-3, 4, 1_000_000)
        d3 = convex_angle_distance(a + 360.0 * k, b)
        assert np.abs(d3 - d1).max() < 1e-9

    @given(
        st.floats(-720, 720, allow_nan=False),
        st.floats(-720, 720, allow_nan=False),
        st.integers(-5, 5),
    )
    @settings(max_examples=300, deadline=None)
    def test_properties_hypothesis(self, a, b, k):
        d = convex_angle_distance(a, b)
        assert 0.0 <= d <= 180.0
        assert d == convex_angle_distance(b, a)
        assert convex_angle_distance(a + 360.0 * k, a) == pytest.approx(0.0, abs=1e-9)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            convex_angle_distance(float("nan"), 0.0)


class TestHalfTurnFold:
    def test_values(self):
        assert half_turn_fold_distance(0.0) == 0.0
        assert half_turn_fold_distance(180.0) == 0.0
        assert half_turn_fold_distance(360.0) == 0.0
        assert half_turn_fold_distance(90.0) == 90.0
        assert half_turn_fold_distance(200.0) == pytest.approx(20.0)


class TestWorkspaceErrors:
    def test_exact_targets_give_zero_errors(self, ds3):
        theta_deg = ds3.matrix([f"theta_deg_{j}" for j in (1, 2, 3)])
        positions_hat, orientations_hat, pos_err, orn_err = workspace_errors(ds3, theta_deg)
        assert np.all(pos_err == 0.0)
        assert np.all(orn_err == 0.0)
        assert np.array_equal(positions_hat, ds3.matrix(["x", "y", "z"]))

    def test_perturbed_targets_give_positive_errors(self, ds3):
        theta_deg = ds3.matrix([f"theta_deg_{j}" for j in (1, 2, 3)]) + 2.0
        _, _, pos_err, orn_err = workspace_errors(ds3, theta_deg)
        assert pos_err.min() > 0.0
        assert orn_err.min() >= 0.0 and orn_err.max() <= 180.0


class TestPoseErrors:
    def test_report_fields_and_ranges(self, trained, ds3):
        report = pose_errors(trained, ds3, "test", seed=123)
        assert report.n_samples == ds3.n_rows
        assert report.split == "test"
        assert report.variant == "RG-N-3-2-22"
        assert np.all(report.position_errors >= 0.0)
        assert np.all((report.orientation_errors >= 0.0) & (report.orientation_errors <= 180.0))
        agg = report.aggregates()
        assert agg["r2"] <= 1.0
        assert agg["position_error_mean"] >= 0.0

    def test_deterministic_given_seed(self, trained, ds3):
        a = pose_errors(trained, ds3, "test", seed=9)
        b = pose_errors(trained, ds3, "test", seed=9)
        assert np.array_equal(a.theta_hat_rad, b.theta_hat_rad)
        assert np.array_equal(a.position_errors, b.position_errors)

    def test_dof_mismatch(self, ds3):
        model = build_model("DE", "N", 5, 2, 8, substream(11, "m"))
        with pytest.raises(ValueError):
            pose_errors(model, ds3, "test")

    def test_save_load_round_trip(self, trained, ds3, tmp_path):
        report = pose_errors(trained, ds3, "test", seed=5)
        report.save(tmp_path)
        back = EvalReport.load(tmp_path / "report.json")
        assert back.split == report.split
        assert np.array_equal(back.position_errors, report.position_errors)
        assert np.array_equal(back.theta_hat_rad, report.theta_hat_rad)
        assert np.array_equal(back.positions, report.positions)


def synthetic_report(n=100, dof=3, seed=0) -> EvalReport:
    rng = substream(seed, "synthetic-report")
    theta_deg = rng.uniform(0, 360, (n, dof))
    return EvalReport(
        split="test",
        variant="RG-N-3-2-22",
        dof=dof,
        theta_hat_rad=theta_deg * math.pi / 180.0,
        theta_rad=theta_deg * math.pi / 180.0,
        theta_deg=theta_deg,
        positions=rng.normal(size=(n, 3)),
        positions_hat=rng.normal(size=(n, 3)),
        orientations=rng.uniform(-180, 180, (n, 3)),
        orientations_hat=rng.uniform(-180, 180, (n, 3)),
        position_errors=rng.uniform(0, 10, n),
        orientation_errors=rng.uniform(0, 180, n),
    )


class TestWorstCase:
    def test_extract_size(self):
        report = synthetic_report(100)
        extract = worst_case_analysis(report, 0.05)
        assert extract.size == 5
        assert extract.position_indices.shape == (5,)

    def test_outlier_lands_in_extract(self):
        report = synthetic_report(100)
        report.position_errors[42] = 1e6
        extract = worst_case_analysis(report, 0.05)
        assert 42 in extract.position_indices.tolist()

    def test_partition_correctness(self):
        report = synthetic_report(333, seed=1)
        extract = worst_case_analysis(report, 0.05)
        for errors, idx in (
            (report.position_errors, extract.position_indices),
            (report.orientation_errors, extract.orientation_indices),
        ):
            inside = errors[idx]
            outside = np.delete(errors, idx)
            assert inside.min() >= outside.max() or np.isclose(inside.min(), outside.max())

    def test_ties_resolved_by_index(self):
        report = synthetic_report(10)
        report.position_errors[:] = 1.0
        extract = worst_case_analysis(report, 0.2)
        assert extract.position_indices.tolist() == [0, 1]

    def test_fraction_validated(self):
        report = synthetic_report(10)
        with pytest.raises(ValueError):
            worst_case_analysis(report, 0.0)
        with pytest.raises(ValueError):
            worst_case_analysis(report, 1.2)

    def test_histogram_conservation(self):
        report = synthetic_report(200, seed=2)
        extract = worst_case_analysis(report, 0.05)
        assert extract.position_hist_counts.sum() == extract.size
        assert extract.orientation_hist_counts.sum() == extract.size
        assert extract.position_hist_edges.shape == (51,)

    def test_theta_pairs_only_for_3dof(self):
        report = synthetic_report(50)
        extract = worst_case_analysis(report, 0.1)
        assert extract.theta_pairs is not None
        assert extract.theta_pairs.shape == (5, 2)
        np.testing.assert_array_equal(
            extract.theta_pairs, report.theta_deg[extract.orientation_indices][:, 1:3]
        )


class TestExports:
    def test_files_and_round_trip(self, tmp_path):
        report = synthetic_report(200, seed=3)
        extract = worst_case_analysis(report, 0.05)
        written = export_analysis(extract, tmp_path)
        names = {p.name for p in written}
        assert names == {
            "position_error_histogram.csv",
            "orientation_error_histogram.csv",
            "worst_position_targets.csv",
            "worst_orientation_targets.csv",
            "theta_pair_scatter.csv",
        }
        edges, counts = load_histogram(tmp_path / "position_error_histogram.csv")
        assert np.array_equal(edges, extract.position_hist_edges)
        assert np.array_equal(counts, extract.position_hist_counts)

    def test_empty_report_produces_headers_only(self, tmp_path):
        report = synthetic_report(0)
        extract = worst_case_analysis(report, 0.05)
        assert extract.size == 0
        written = export_analysis(extract, tmp_path)
        for path in written:
            lines = path.read_text().strip().splitlines()
            if "histogram" not in path.name:
                assert len(lines) == 1

    def test_thinning(self, tmp_path):
        report = synthetic_report(400, seed=4)
        extract = worst_case_analysis(report, 0.05)  # 20 rows
        export_analysis(extract, tmp_path, every=5)
        rows = (tmp_path / "worst_position_targets.csv").read_text().strip().splitlines()
        assert len(rows) - 1 == 4
        with pytest.raises(ValueError):
            export_analysis(extract, tmp_path, every=0)
