# tests/test_analytics.py
"""
Tests for sparsity, spectral, trajectory and gate-map analytics
"""
import math

import numpy as np
import pytest
from scipy.spatial import Delaunay

from tests import TEST_CONFIG, TINY_SYNTH, tiny_clips
from utils.analytics_utils import (
    BoundaryMasks,
    GateMapAnalyzer,
    MetricsCalculator,
    TrajectoryAnalyzer,
    generate_metric_report,
    raw_anomaly_trace,
    run_cells,
)
from utils.validation_utils import ValidationError


@pytest.fixture
def rng():
    return np.random.default_rng(TEST_CONFIG['seed'])


class TestHoyer:
    """Test Hoyer sparsity"""

    @pytest.mark.parametrize('x,expected', [
        ([1.0, 0.0, 0.0, 0.0], 1.0),
        ([1.0, 1.0, 1.0, 1.0], 0.0),
        ([3.0, 4.0, 0.0, 0.0], 0.6),
    ])
    def test_examples(self, x, expected):
        """Test concentrated, uniform and hand-computed vectors"""
        assert MetricsCalculator.hoyer(np.array(x)) == pytest.approx(expected)

    def test_all_zero(self):
        """Test the zero vector is defined as 0"""
        assert MetricsCalculator.hoyer(np.zeros(5)) == 0.0

    def test_too_short(self):
        """Test a single element is rejected"""
        with pytest.raises(ValidationError):
            MetricsCalculator.hoyer(np.array([2.0]))

    def test_scale_invariance(self, rng):
        """Test hoyer(c x) = hoyer(x)"""
        x = rng.standard_normal(64)
        assert MetricsCalculator.hoyer(7.5 * x) == pytest.approx(MetricsCalculator.hoyer(x), abs=1e-12)

    def test_frame_mean(self):
        """Test frame_hoyer averages per-frame values"""
        frames = np.array([[[1.0, 0.0], [0.0, 0.0]], [[1.0, 1.0], [1.0, 1.0]]])
        assert MetricsCalculator.frame_hoyer(frames) == pytest.approx(0.5)


class TestSpectralCentroid:
    """Test the temporal spectral centroid"""

    def test_constant(self):
        """Test a constant series has no AC power"""
        assert MetricsCalculator.spectral_centroid(np.full(8, 3.0)) == 0.0

    def test_single_bin(self):
        """Test cos(2 pi 2t / 8) sits at 0.25 cycles/frame"""
        t = np.arange(8)
        assert MetricsCalculator.spectral_centroid(np.cos(2 * np.pi * 2 * t / 8)) == pytest.approx(0.25)

    def test_two_bins(self):
        """Test equal power in bins 1 and 3 averages to 0.25"""
        t = np.arange(8)
        series = np.cos(2 * np.pi * t / 8) + np.cos(2 * np.pi * 3 * t / 8)
        assert MetricsCalculator.spectral_centroid(series) == pytest.approx(0.25)

    def test_amplitude_and_offset(self, rng):
        """Test invariance to scaling and constant offsets"""
        series = rng.standard_normal(16)
        base = MetricsCalculator.spectral_centroid(series)
        assert MetricsCalculator.spectral_centroid(4.0 * series + 9.0) == pytest.approx(base)

    def test_too_short(self):
        """Test fewer than four frames are rejected"""
        with pytest.raises(ValidationError):
            MetricsCalculator.spectral_centroid(np.arange(3.0))


class TestAuc:
    """Test rank-based AUROC"""

    def test_separated(self):
        """Test perfectly separated scores"""
        assert MetricsCalculator.auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_reversed(self):
        """Test perfectly inverted scores"""
        assert MetricsCalculator.auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_all_ties(self):
        """Test equal scores count half"""
        assert MetricsCalculator.auc(np.full(6, 0.3), [0, 1, 0, 1, 0, 1]) == pytest.approx(0.5)

    def test_shuffled(self, rng):
        """Test labels unrelated to scores give about 0.5"""
        scores = rng.uniform(size=4000)
        labels = rng.integers(0, 2, 4000)
        assert MetricsCalculator.auc(scores, labels) == pytest.approx(0.5, abs=0.05)

    def test_single_class(self):
        """Test one-class labels are rejected"""
        with pytest.raises(ValidationError):
            MetricsCalculator.auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        """Test scores and labels must align"""
        with pytest.raises(ValidationError):
            MetricsCalculator.auc([0.1, 0.2, 0.3], [0, 1])


class TestCurvature:
    """Test angular curvature of trajectories"""

    def test_collinear(self):
        """Test forward steps along a line turn by 0"""
        angles, median = TrajectoryAnalyzer.angular_curvature(np.array([[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]]))
        np.testing.assert_allclose(angles, 0.0, atol=1e-7)
        assert median == pytest.approx(0.0, abs=1e-7)

    def test_orthogonal(self):
        """Test a right-angle turn"""
        angles, _ = TrajectoryAnalyzer.angular_curvature(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]))
        assert angles[0] == pytest.approx(math.pi / 2)

    def test_reversal(self):
        """Test going back the way it came"""
        angles, _ = TrajectoryAnalyzer.angular_curvature(np.array([0.0, 1.0, 0.0]))
        assert angles[0] == pytest.approx(math.pi)

    def test_stationary_step(self):
        """Test a zero-length step gives angle 0"""
        angles, _ = TrajectoryAnalyzer.angular_curvature(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]))
        assert angles[0] == 0.0

    def test_median(self):
        """Test the clip statistic is the median turning angle"""
        path = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0]])
        angles, median = TrajectoryAnalyzer.angular_curvature(path)
        np.testing.assert_allclose(angles, [0.0, math.pi / 2, math.pi / 2], atol=1e-7)
        assert median == pytest.approx(math.pi / 2)

    def test_too_short(self):
        """Test two points are rejected"""
        with pytest.raises(ValidationError):
            TrajectoryAnalyzer.angular_curvature(np.zeros((2, 3)))


class TestTrajDiffStats:
    """Test first and second order difference statistics"""

    def test_constant(self):
        """Test constant features give all-zero stats"""
        stats = TrajectoryAnalyzer.traj_diff_stats(np.ones((5, 4)))
        assert all(v == 0.0 for v in stats.values())
        assert len(stats) == 16

    def test_straight_line(self):
        """Test equal steps keep d1 constant and d2 at zero"""
        z = np.outer(np.arange(6.0), [1.0, 2.0, 2.0])
        stats = TrajectoryAnalyzer.traj_diff_stats(z)
        assert stats['d1_mean'] == pytest.approx(3.0)
        assert stats['d1_std'] == pytest.approx(0.0, abs=1e-12)
        assert stats['d2_max'] == pytest.approx(0.0, abs=1e-12)

    def test_loop_oracle(self):
        """Test a hand-built 4-point trajectory against a direct loop"""
        z = np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 5.0], [1.0, 5.0]])
        d1 = [math.dist(z[i], z[i + 1]) for i in range(3)]
        d2 = [abs(d1[i + 1] - d1[i]) for i in range(2)]
        stats = TrajectoryAnalyzer.traj_diff_stats(z)
        assert stats['d1_mean'] == pytest.approx(sum(d1) / 3)
        assert stats['d1_max'] == pytest.approx(5.0)
        assert stats['d1_min'] == pytest.approx(1.0)
        assert stats['d2_mean'] == pytest.approx(sum(d2) / 2)
        assert stats['d2_std'] == pytest.approx(np.std(d2))

    def test_cosine_variant_scale_free(self, rng):
        """Test cosine stats ignore per-frame feature scale"""
        z = rng.standard_normal((5, 3))
        scaled = z * np.array([[1.0], [2.0], [0.5], [3.0], [1.5]])
        a = TrajectoryAnalyzer.traj_diff_stats(z)
        b = TrajectoryAnalyzer.traj_diff_stats(scaled)
        for key in ('cos_d1_mean', 'cos_d2_max'):
            assert a[key] == pytest.approx(b[key])


class TestPca:
    """Test three-component projection"""

    def test_axis_points(self):
        """Test points on one axis project onto the first component only"""
        points = np.zeros((6, 4))
        points[:, 1] = np.arange(6.0)
        mean, basis = TrajectoryAnalyzer.fit_pca3(points)
        np.testing.assert_allclose(basis[:, 0], [0.0, 1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_array_equal(basis[:, 1:], 0.0)
        projected = TrajectoryAnalyzer.pca3_project(points)
        np.testing.assert_allclose(projected[:, 0], np.arange(6.0) - 2.5, atol=1e-12)
        np.testing.assert_array_equal(projected[:, 1:], 0.0)

    def test_variance_preserved(self):
        """Test an isotropic simplex keeps its total variance"""
        points = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
        projected = TrajectoryAnalyzer.pca3_project(points)
        assert np.var(projected, axis=0).sum() == pytest.approx(np.var(points, axis=0).sum())

    def test_sign_convention(self, rng):
        """Test the largest coordinate of each axis is positive"""
        _, basis = TrajectoryAnalyzer.fit_pca3(rng.standard_normal((20, 5)))
        for i in range(3):
            column = basis[:, i]
            assert column[np.argmax(np.abs(column))] > 0

    def test_duplicate_clouds(self, rng):
        """Test identical inputs give identical projections"""
        points = rng.standard_normal((10, 6))
        np.testing.assert_array_equal(TrajectoryAnalyzer.pca3_project(points),
                                      TrajectoryAnalyzer.pca3_project(points.copy()))

    def test_pool_fit(self, rng):
        """Test projecting with a given fit uses that mean and basis"""
        pool = rng.standard_normal((12, 4))
        fitted = TrajectoryAnalyzer.fit_pca3(pool)
        subset = pool[:5]
        np.testing.assert_allclose(TrajectoryAnalyzer.pca3_project(subset, fitted),
                                   (subset - fitted[0]) @ fitted[1])

    def test_too_few_points(self):
        """Test three points are rejected"""
        with pytest.raises(ValidationError):
            TrajectoryAnalyzer.fit_pca3(np.eye(3))


class TestHullVolume:
    """Test convex hull volume"""

    def test_tetrahedron(self):
        """Test the unit simplex"""
        points = np.vstack([np.zeros(3), np.eye(3)])
        assert TrajectoryAnalyzer.convex_hull_volume(points) == pytest.approx(1.0 / 6.0)

    def test_cube(self):
        """Test the unit cube vertices"""
        cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
        assert TrajectoryAnalyzer.convex_hull_volume(cube) == pytest.approx(1.0)

    def test_coplanar(self):
        """Test points in a plane have zero volume"""
        points = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.3, 0.6, 0.0]])
        assert TrajectoryAnalyzer.convex_hull_volume(points) == 0.0

    def test_translation_and_scaling(self, rng):
        """Test translation invariance and cubic scaling"""
        points = rng.uniform(size=(12, 3))
        base = TrajectoryAnalyzer.convex_hull_volume(points)
        assert TrajectoryAnalyzer.convex_hull_volume(points + 5.0) == pytest.approx(base)
        assert TrajectoryAnalyzer.convex_hull_volume(2.0 * points) == pytest.approx(8.0 * base)

    def test_monte_carlo(self, rng):
        """Test 16 random points against a membership estimate"""
        points = rng.uniform(size=(16, 3))
        samples = rng.uniform(size=(1_000_000, 3))
        inside = Delaunay(points).find_simplex(samples) >= 0
        assert TrajectoryAnalyzer.convex_hull_volume(points) == pytest.approx(inside.mean(), rel=0.02)

    def test_errors(self):
        """Test too few points and wrong dimension"""
        with pytest.raises(ValidationError):
            TrajectoryAnalyzer.convex_hull_volume(np.eye(3))
        with pytest.raises(ValidationError):
            TrajectoryAnalyzer.convex_hull_volume(np.zeros((5, 2)))


class TestRawAnomalyTrace:
    """Test the non-firing leaky integrator"""

    def test_geometric_closed_form(self):
        """Test constant input against a(1 - d^t) / (1 - d)"""
        a, tau = 0.3, 4.0
        d = math.exp(-1.0 / tau)
        trace = raw_anomaly_trace(np.full(8, a), tau)
        expected = [a * (1 - d ** t) / (1 - d) for t in range(1, 9)]
        np.testing.assert_allclose(trace, expected)

    def test_infinite_tau(self):
        """Test tau = inf is a running sum"""
        values = np.array([0.5, 0.1, 0.0, 2.0])
        np.testing.assert_allclose(raw_anomaly_trace(values, math.inf), np.cumsum(values))

    def test_zero_input(self):
        """Test zero input stays zero"""
        np.testing.assert_array_equal(raw_anomaly_trace(np.zeros(5)), 0.0)

    def test_monotone(self, rng):
        """Test raising one input never lowers later values"""
        values = rng.uniform(size=10)
        bumped = values.copy()
        bumped[4] += 1.0
        base, raised = raw_anomaly_trace(values), raw_anomaly_trace(bumped)
        np.testing.assert_array_equal(base[:4], raised[:4])
        assert np.all(raised[4:] >= base[4:])

    def test_errors(self):
        """Test negative inputs and non-positive tau"""
        with pytest.raises(ValidationError):
            raw_anomaly_trace([0.1, -0.2])
        with pytest.raises(ValidationError):
            raw_anomaly_trace([0.1, 0.2], 0.0)


class TestBoundaryMasks:
    """Test ring and interior cell sets"""

    def test_fourteen(self):
        """Test 52 boundary and 144 interior cells at G = 14"""
        masks = BoundaryMasks(14)
        assert masks.boundary_size == 52
        assert masks.interior_size == 144
        assert masks.boundary.sum() == 52
        assert masks.interior.sum() == 144

    @pytest.mark.parametrize('grid', [3, 7, 20])
    def test_partition(self, grid):
        """Test the two sets cover the grid without overlap"""
        masks = BoundaryMasks(grid)
        assert masks.boundary_size + masks.interior_size == grid * grid
        assert not np.any(masks.boundary & masks.interior)

    def test_small_grid(self):
        """Test grids below 3 are rejected"""
        with pytest.raises(ValidationError):
            BoundaryMasks(2)

    def test_run_cells(self):
        """Test only runs of the minimum length are marked"""
        line = np.array([1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1], dtype=bool)
        np.testing.assert_array_equal(run_cells(line, 3), [0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1])


class TestFireFractions:
    """Test boundary and interior fire"""

    def test_all_active(self):
        """Test a fully active mask"""
        assert GateMapAnalyzer.fire_fractions(np.ones((14, 14), dtype=bool)) == (1.0, 1.0)

    def test_all_inactive(self):
        """Test an empty mask"""
        assert GateMapAnalyzer.fire_fractions(np.zeros((14, 14), dtype=bool)) == (0.0, 0.0)

    def test_top_edge_run(self):
        """Test a single 5-cell run on the top edge"""
        active = np.zeros((14, 14), dtype=bool)
        active[0, 2:7] = True
        bf, inf = GateMapAnalyzer.fire_fractions(active)
        assert bf == pytest.approx(5 / 52)
        assert inf == 0.0

    def test_short_run_ignored(self):
        """Test runs of two do not count"""
        active = np.zeros((14, 14), dtype=bool)
        active[0, 2:4] = True
        active[6, 6:8] = True
        assert GateMapAnalyzer.fire_fractions(active) == (0.0, 0.0)

    def test_interior_row(self):
        """Test a full interior row"""
        active = np.zeros((14, 14), dtype=bool)
        active[5, 1:13] = True
        bf, inf = GateMapAnalyzer.fire_fractions(active)
        assert bf == 0.0
        assert inf == pytest.approx(12 / 144)

    def test_clip_average_skips_first_frame(self):
        """Test the clip value averages frames 1..T-1"""
        maps = np.zeros((3, 14, 14))
        maps[1:, 0, 2:7] = 1.0
        bf, inf, per_frame = GateMapAnalyzer.boundary_interior_fire(maps)
        assert per_frame.shape == (3, 2)
        assert bf == pytest.approx(5 / 52)
        assert inf == 0.0
        bf_all, _, _ = GateMapAnalyzer.boundary_interior_fire(maps, skip_first=False)
        assert bf_all == pytest.approx(2 * 5 / 52 / 3)


class TestEdgeGateOverlap:
    """Test agreement between gate and edge maps"""

    def test_identical(self, rng):
        """Test a gate equal to the binarized edge map"""
        edges = rng.uniform(size=(10, 10))
        gate = (edges > np.percentile(edges, 70)).astype(float)
        result = GateMapAnalyzer.edge_gate_overlap(gate, edges)
        assert result['pearson'] == pytest.approx(1.0)
        assert result['precision_at_top'] == 1.0

    def test_independent_noise(self, rng):
        """Test unrelated noise has near-zero correlation"""
        result = GateMapAnalyzer.edge_gate_overlap(rng.uniform(size=1000), rng.uniform(size=1000))
        assert abs(result['pearson']) < 0.1

    def test_edge_ratio(self, rng):
        """Test twice the gate on edge cells"""
        edges = rng.uniform(size=(10, 10))
        gate = 1.0 + (edges > np.percentile(edges, 70))
        result = GateMapAnalyzer.edge_gate_overlap(gate, edges)
        assert result['mean_gate_edge'] == pytest.approx(2.0)
        assert result['mean_gate_nonedge'] == pytest.approx(1.0)
        assert result['edge_ratio'] == pytest.approx(2.0)

    def test_constant_gate(self, rng):
        """Test a constant map has Pearson 0"""
        result = GateMapAnalyzer.edge_gate_overlap(np.full((6, 6), 0.4), rng.uniform(size=(6, 6)))
        assert result['pearson'] == 0.0

    @pytest.mark.parametrize('value', [0.1, 0.3, 0.4, 0.7, 1.0 / 3.0])
    def test_float_constant_gate(self, rng, value):
        """Test constants whose floating-point std is not exactly zero"""
        edges = rng.uniform(size=(14, 14))
        assert GateMapAnalyzer.edge_gate_overlap(np.full((14, 14), value), edges)['pearson'] == 0.0

    def test_constant_edge_map(self, rng):
        """Test a flat edge map (no cell above the percentile) has Pearson 0"""
        result = GateMapAnalyzer.edge_gate_overlap(rng.uniform(size=(6, 6)), np.full((6, 6), 0.2))
        assert result['pearson'] == 0.0

    def test_misaligned(self):
        """Test maps of different sizes are rejected"""
        with pytest.raises(ValidationError):
            GateMapAnalyzer.edge_gate_overlap(np.zeros((4, 4)), np.zeros((5, 5)))

    def test_clip_rows(self, rng):
        """Test one row per frame after the first"""
        clips, _ = tiny_clips(n_pairs=1, with_embeddings=False)
        maps = rng.uniform(size=(TINY_SYNTH['frames'], 7, 7))
        rows = GateMapAnalyzer.clip_edge_overlap(clips[0], maps, 7)
        assert len(rows) == TINY_SYNTH['frames'] - 1
        assert set(rows[0]) == {'pearson', 'precision_at_top', 'mean_gate_edge', 'mean_gate_nonedge', 'edge_ratio'}


class TestMetricReport:
    """Test per-clip metric tables"""

    def test_rows_and_summary(self):
        """Test one row per clip plus mean and std rows"""
        clips, embeddings = tiny_clips()
        df = generate_metric_report(clips, embeddings, event_config=None)
        assert len(df) == len(clips) + 2
        assert list(df['clip'].iloc[-2:]) == ['mean', 'std']
        for column in ('S_rgb', 'S_res', 'f_c', 'theta', 'volume', 'anom_1', 'anom_final'):
            assert column in df.columns
        values = df.drop(columns=['clip', 'label']).to_numpy(dtype=float)
        assert np.all(np.isfinite(values))
        assert df['S_rgb'].iloc[-2] == pytest.approx(df['S_rgb'].iloc[:len(clips)].mean())

    def test_without_embeddings(self):
        """Test trajectory metrics are skipped when embeddings are missing"""
        clips, _ = tiny_clips(n_pairs=1, with_embeddings=False)
        df = generate_metric_report(clips, metrics=['hoyer', 'curvature', 'chroma', 'events'])
        assert 'theta' not in df.columns
        assert {'S_chroma', 'event_rate'} <= set(df.columns)
        assert df['event_rate'].iloc[0] >= 0.0

    def test_trajectory_stats(self):
        """Test the difference statistics can be requested"""
        clips, embeddings = tiny_clips(n_pairs=1)
        df = generate_metric_report(clips, embeddings, metrics=['traj'], names=['a', 'b'])
        assert list(df['clip'].iloc[:2]) == ['a', 'b']
        assert 'cos_d2_min' in df.columns

    def test_unknown_metric(self):
        """Test unknown metric names"""
        clips, _ = tiny_clips(n_pairs=1, with_embeddings=False)
        with pytest.raises(ValidationError, match="unknown"):
            generate_metric_report(clips, metrics=['tsne'])

    def test_empty(self):
        """Test an empty clip list"""
        with pytest.raises(ValidationError):
            generate_metric_report([])
