# -*- coding: utf-8 -*-


import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import quad

from gpair.assa import TRUNCATION, compute_assa, exact_ceil, make_kernel_taps
from gpair.cls_def import AcousticConfig, ArrayLabel
from gpair.exceptions import GeometryConflictError, InvalidArgumentError, ResourceLimitError
from gpair.geometry import (DetectorArray, VoxelGrid, VoxelImage, aligned_index, build_hemispherical_array,
                            build_planar_array, build_tof_table)
from gpair.operators import (SignalSet, SystemModel, UpsampledBuffer, adjoint, adjoint_dot_test, correlate,
                             forward, scatter_convolve)
from gpair.utils import RUNTIME, configure_runtime
from gpair.wavefield import (GaussianSource, build_dense_matrix, oracle_forward, pressure_full, pressure_outgoing,
                             spherical_integral)

# one sample of travel at 20 MHz in water
SAMPLE_PITCH = 1500.0 / 20e6


def get_acoustic(n_t=512):
    return AcousticConfig(v_s=1500.0, f_s=20e6, n_t=n_t, t0=0.0)


def get_small_case(dims=(3, 3, 3), spacing=4e-4, n_detectors=4, radius=5e-3, n_t=128):
    grid = VoxelGrid.centered(dims, spacing)
    array = build_hemispherical_array(radius, (0.0, 0.0, 0.0), n_detectors)
    return grid, array, get_acoustic(n_t)


def get_random_case(rng):
    """Random grid, hemispherical array and record length, all pairs well inside the record."""
    dims = tuple(int(v) for v in rng.integers(2, 7, size=3))
    spacing = float(rng.uniform(2e-4, 6e-4))
    grid = VoxelGrid.centered(dims, spacing)
    radius = float(rng.uniform(4e-3, 8e-3))
    array = build_hemispherical_array(radius, (0.0, 0.0, 0.0), int(rng.integers(4, 17)))
    n_t = int(rng.choice([192, 256, 384]))
    sigma = spacing * float(rng.uniform(0.5, 2.0))
    return grid, array, get_acoustic(n_t), sigma


def get_single_source_case(distance, sigma, n_t=512, alpha_scale=1):
    grid = VoxelGrid((1, 1, 1), SAMPLE_PITCH, (0.0, 0.0, 0.0))
    array = DetectorArray([[0.0, 0.0, distance]])
    acoustic = get_acoustic(n_t)
    model = SystemModel(grid, array, acoustic, sigma=sigma, alpha_scale=alpha_scale)
    return grid, array, acoustic, model


def rel_l2(a, b):
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / np.linalg.norm(np.ravel(b)))


class GeometryTestCase(unittest.TestCase):
    def test_linear_index_convention(self):
        grid = VoxelGrid((3, 4, 5), 1e-3)
        self.assertEqual(grid.linear_index(2, 1, 3), 2 + 3 * (1 + 4 * 3))
        self.assertEqual(grid.unravel(2 + 3 * (1 + 4 * 3)), (2, 1, 3))
        self.assertEqual(grid.shape, (5, 4, 3))
        with self.assertRaises(InvalidArgumentError):
            grid.linear_index(3, 0, 0)

    def test_positions_match_index_convention(self):
        grid = VoxelGrid((3, 4, 2), 5e-4, (1e-3, -2e-3, 0.5e-3))
        positions = grid.positions()
        for i in (0, 1, 5, 13, grid.n_voxels - 1):
            assert_array_equal(positions[i], grid.position(i))
        assert_allclose(grid.position(grid.linear_index(2, 3, 1)), [2e-3, -0.5e-3, 1e-3], rtol=0, atol=1e-15)

    def test_centered_grid_is_symmetric(self):
        grid = VoxelGrid.centered((4, 3, 2), 1e-3)
        lo, hi = grid.extent()
        assert_allclose(lo, -hi, rtol=0, atol=1e-15)

    def test_invalid_grid(self):
        with self.assertRaises(InvalidArgumentError):
            VoxelGrid((0, 2, 2), 1e-3)
        with self.assertRaises(InvalidArgumentError):
            VoxelGrid((2, 2, 2), 0.0)

    def test_image_shapes(self):
        grid = VoxelGrid((3, 4, 5), 1e-3)
        image = VoxelImage(grid, np.arange(grid.n_voxels, dtype=np.float64))
        self.assertEqual(image.volume.shape, (5, 4, 3))
        self.assertEqual(image.volume[3, 1, 2], grid.linear_index(2, 1, 3))
        with self.assertRaises(InvalidArgumentError):
            VoxelImage(grid, np.zeros(grid.n_voxels + 1))

    def test_detector_array_rejects_duplicates(self):
        with self.assertRaises(InvalidArgumentError):
            DetectorArray([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        with self.assertRaises(InvalidArgumentError):
            DetectorArray(np.zeros((2, 2)))

    def test_planar_array_layout(self):
        array = build_planar_array(0.1024, 0.1024, 4, -0.01)
        self.assertEqual(array.n_detectors, 16)
        self.assertEqual(array.label, ArrayLabel.planar)
        assert_allclose(array.positions[0], [-0.0512, -0.0512, -0.01])
        assert_allclose(array.positions[-1], [0.0512, 0.0512, -0.01])
        # x fastest
        self.assertGreater(array.positions[1, 0], array.positions[0, 0])
        self.assertEqual(array.positions[1, 1], array.positions[0, 1])
        self.assertGreater(array.positions[4, 1], array.positions[0, 1])
        self.assertTrue(np.all(array.positions[:, 2] == -0.01))

    def test_hemispherical_array(self):
        center = (1e-3, -2e-3, 3e-3)
        array = build_hemispherical_array(0.06, center, 64)
        self.assertEqual(array.n_detectors, 64)
        radii = np.linalg.norm(array.positions - np.asarray(center), axis=1)
        assert_allclose(radii, 0.06, rtol=1e-12)
        self.assertTrue(np.all(array.positions[:, 2] <= center[2]))
        self.assertEqual(np.unique(array.positions, axis=0).shape[0], 64)

    def test_tof_indices_follow_round_half_up(self):
        grid, array, acoustic = get_small_case()
        assa = compute_assa(grid.spacing, acoustic)
        tof = build_tof_table(grid, array, acoustic, assa)
        expected = np.floor(tof.distances / acoustic.v_s * assa.f_s_up + 0.5)
        assert_array_equal(tof.aligned_indices[tof.valid_mask], expected[tof.valid_mask])
        self.assertTrue(np.all(tof.distances[tof.valid_mask] > 0))
        k = tof.aligned_indices.astype(np.int64)
        assert_array_equal(tof.valid_mask, (k - assa.K >= 0) & (k + assa.K < assa.n_t_up))

    def test_aligned_index_rounding(self):
        f_up = 80e6
        self.assertEqual(aligned_index(1500.0 * 10.3 / f_up, 1500.0, f_up), 10)
        self.assertEqual(aligned_index(1500.0 * 10.6 / f_up, 1500.0, f_up), 11)
        # a positive t0 moves the arrival earlier on the clock
        self.assertEqual(aligned_index(1500.0 * 10.6 / f_up, 1500.0, f_up, t0=2.0 / f_up), 9)

    def test_pairs_outside_record_are_masked(self):
        grid = VoxelGrid.centered((2, 2, 2), 4e-4)
        array = DetectorArray([[0.0, 0.0, 0.1]])
        acoustic = get_acoustic(64)
        assa = compute_assa(grid.spacing, acoustic)
        tof = build_tof_table(grid, array, acoustic, assa)
        self.assertEqual(tof.n_valid, 0)
        self.assertTrue(np.all(tof.inv_distances == 0.0))
        model = SystemModel(grid, array, acoustic)
        self.assertTrue(np.all(model.forward(np.ones(grid.n_voxels)) == 0.0))
        self.assertTrue(np.all(model.adjoint(np.ones((1, 64))) == 0.0))

    def test_coincident_detector_is_rejected(self):
        grid = VoxelGrid.centered((3, 3, 3), 1e-3)
        array = DetectorArray([[0.0, 0.0, 0.05], [0.0, 0.0, 0.0]])
        acoustic = get_acoustic(128)
        assa = compute_assa(grid.spacing, acoustic)
        with self.assertRaises(GeometryConflictError) as ctx:
            build_tof_table(grid, array, acoustic, assa)
        self.assertEqual(ctx.exception.voxel, 13)
        self.assertEqual(ctx.exception.detector, 1)

    def test_pair_cap(self):
        grid, array, acoustic = get_small_case()
        assa = compute_assa(grid.spacing, acoustic)
        with self.assertRaises(ResourceLimitError):
            build_tof_table(grid, array, acoustic, assa, max_pairs=10)

    def test_mismatched_clock(self):
        grid, array, acoustic = get_small_case()
        assa = compute_assa(grid.spacing, get_acoustic(256))
        with self.assertRaises(InvalidArgumentError):
            build_tof_table(grid, array, acoustic, assa)


class AssaTestCase(unittest.TestCase):
    def test_hand_evaluated_parameters(self):
        assa = compute_assa(62.5e-6, get_acoustic())
        self.assertEqual((assa.n_half, assa.alpha, assa.K), (3, 4, 12))
        self.assertAlmostEqual(assa.f_s_up, 80e6)
        self.assertEqual(assa.n_t_up, 4 * 512)

        assa = compute_assa(2e-4, get_acoustic())
        self.assertEqual((assa.n_half, assa.alpha), (8, 2))

        assa = compute_assa(1e-3, get_acoustic())
        self.assertEqual((assa.n_half, assa.alpha), (40, 1))

    def test_kernel_covers_n_min(self):
        for sigma in (3e-5, 62.5e-6, 1e-4, 2e-4, 3.3e-4, 1e-3):
            for n_min in (3, 9, 25, 41):
                assa = compute_assa(sigma, get_acoustic(), n_min=n_min)
                self.assertGreaterEqual(2 * assa.K + 1, n_min)
                self.assertEqual(assa.K, assa.alpha * assa.n_half)
                self.assertGreaterEqual(assa.n_half * SAMPLE_PITCH, TRUNCATION * sigma * (1 - 1e-9))

    def test_alpha_scale(self):
        base = compute_assa(2e-4, get_acoustic())
        scaled = compute_assa(2e-4, get_acoustic(), alpha_scale=4)
        self.assertEqual(scaled.alpha, 4 * base.alpha)
        self.assertEqual(scaled.K, 4 * base.K)

    def test_invalid_arguments(self):
        with self.assertRaises(InvalidArgumentError):
            compute_assa(0.0, get_acoustic())
        with self.assertRaises(InvalidArgumentError):
            compute_assa(1e-4, get_acoustic(), n_min=2)
        with self.assertRaises(InvalidArgumentError):
            compute_assa(1e-4, get_acoustic(), alpha_scale=0)

    def test_exact_ceil_snaps_rounding_noise(self):
        self.assertEqual(exact_ceil(3 * 75e-6 * 20e6 / 1500.0), 3)
        self.assertEqual(exact_ceil(2.5), 3)
        self.assertEqual(exact_ceil(8.0001), 9)
        self.assertEqual(exact_ceil(8.000000000001), 8)

    def test_taps_are_odd(self):
        acoustic = get_acoustic()
        for sigma in (62.5e-6, 2e-4, 4e-4):
            assa = compute_assa(sigma, acoustic)
            taps = make_kernel_taps(assa, sigma, acoustic)
            K = taps.K
            self.assertEqual(taps.taps.shape, (2 * K + 1,))
            self.assertEqual(taps[0], 0.0)
            for k in range(1, K + 1):
                self.assertEqual(taps[-k], -taps[k])
            self.assertLessEqual(abs(taps.taps.sum()), 1e-12 * np.abs(taps.taps).max())
            self.assertLessEqual(abs(taps[K]), 0.5 * 3 * sigma * math.exp(-4.5) * (1 + 1e-9))
            # positive lobe before the aligned index
            self.assertGreater(taps[-1], 0.0)
            self.assertLess(taps[1], 0.0)

    def test_taps_follow_closed_form(self):
        acoustic = get_acoustic()
        sigma = 2e-4
        assa = compute_assa(sigma, acoustic)
        taps = make_kernel_taps(assa, sigma, acoustic, truncate=False)
        k = np.arange(-taps.K, taps.K + 1)
        d = -(acoustic.v_s * k) * assa.dt_up
        assert_allclose(taps.taps, 0.5 * d * np.exp(-d * d / (2 * sigma * sigma)), rtol=1e-14, atol=1e-300)

    def test_untruncated_hand_example(self):
        acoustic = get_acoustic()
        sigma = 62.5e-6
        assa = compute_assa(sigma, acoustic)
        taps = make_kernel_taps(assa, sigma, acoustic, truncate=False)
        self.assertEqual(taps.K, 12)
        # d = -1500 * 12 / 80e6 = -225 um, 3.6 sigma
        self.assertAlmostEqual(taps[12] / -1.7255e-07, 1.0, places=3)
        self.assertEqual(taps[-12], -taps[12])
        self.assertEqual(int(np.count_nonzero(taps.taps)), 2 * taps.K)
        self.assertGreaterEqual(int(np.count_nonzero(taps.taps)) + 1, assa.n_min)

        truncated = make_kernel_taps(assa, sigma, acoustic)
        self.assertEqual(truncated[12], 0.0)
        self.assertEqual(int(np.count_nonzero(truncated.taps)), 18)

    def test_truncation_window(self):
        acoustic = get_acoustic()
        sigma = 1.17 * SAMPLE_PITCH
        assa = compute_assa(sigma, acoustic, alpha_scale=3)
        taps = make_kernel_taps(assa, sigma, acoustic)
        d = np.abs(acoustic.v_s * np.arange(-taps.K, taps.K + 1) * assa.dt_up)
        self.assertTrue(np.all(taps.taps[d >= TRUNCATION * sigma * (1 + 1e-9)] == 0.0))
        inner = (d > 0) & (d < TRUNCATION * sigma * (1 - 1e-9))
        self.assertTrue(np.all(taps.taps[inner] != 0.0))
        self.assertGreaterEqual(int(np.count_nonzero(inner)), assa.n_min - 1)

    def test_refinement_consistency(self):
        acoustic = get_acoustic()
        sigma = 2e-4
        coarse_assa = compute_assa(sigma, acoustic)
        fine_assa = compute_assa(sigma, acoustic, alpha_scale=2)
        coarse = make_kernel_taps(coarse_assa, sigma, acoustic)
        fine = make_kernel_taps(fine_assa, sigma, acoustic)
        assert_array_equal(fine.taps[::2], coarse.taps)


class WavefieldTestCase(unittest.TestCase):
    def setUp(self):
        self.sigma = 4e-4
        self.source = GaussianSource((0.0, 0.0, 0.0), 1.0, self.sigma)
        self.acoustic = get_acoustic()

    def test_spherical_integral_closed_form(self):
        s = self.sigma
        self.assertEqual(spherical_integral(self.source, 3 * s, 0.0), 0.0)
        assert_allclose(spherical_integral(self.source, 10 * s, 10 * s), 2 * math.pi * s * s, rtol=1e-12)
        a = spherical_integral(self.source, 2 * s, 3 * s) * (2 * s) / (3 * s)
        b = spherical_integral(self.source, 3 * s, 2 * s) * (3 * s) / (2 * s)
        assert_allclose(a, b, rtol=1e-12)

    def test_spherical_integral_against_quadrature(self):
        s = self.sigma
        for r, rp in ((1.5 * s, 0.7 * s), (2 * s, 2.5 * s), (0.3 * s, 1.1 * s)):
            integrand = lambda u: math.exp(-(r * r + rp * rp - 2 * r * rp * u) / (2 * s * s))
            value, _ = quad(integrand, -1.0, 1.0, epsabs=0.0, epsrel=1e-12)
            assert_allclose(spherical_integral(self.source, r, rp), 2 * math.pi * rp * rp * value, rtol=1e-10)

    def test_zero_distance_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            spherical_integral(self.source, 0.0, 1e-3)
        with self.assertRaises(InvalidArgumentError):
            pressure_full(self.source, 0.0, 0.0, self.acoustic)
        with self.assertRaises(InvalidArgumentError):
            pressure_outgoing(self.source, 0.0, 0.0, self.acoustic)

    def test_pressure_full_examples(self):
        s, v = self.sigma, self.acoustic.v_s
        assert_allclose(pressure_full(self.source, s, 0.0, self.acoustic), math.exp(-0.5), rtol=1e-14)
        assert_allclose(pressure_full(self.source, s, s / v, self.acoustic), math.exp(-2.0), rtol=1e-9)

    def test_pressure_outgoing_examples(self):
        s, v = self.sigma, self.acoustic.v_s
        r = 10 * s
        self.assertIsInstance(pressure_outgoing(self.source, r, r / v, self.acoustic), float)
        self.assertAlmostEqual(pressure_outgoing(self.source, r, r / v, self.acoustic), 0.0, places=12)
        before = pressure_outgoing(self.source, r, (r - s) / v, self.acoustic)
        after = pressure_outgoing(self.source, r, (r + s) / v, self.acoustic)
        self.assertGreater(before, 0.0)
        assert_allclose(before, -after, rtol=1e-9)
        self.assertEqual(pressure_outgoing(self.source, r, (r - 3.0001 * s) / v, self.acoustic), 0.0)
        self.assertNotEqual(pressure_outgoing(self.source, r, (r - 3.0001 * s) / v, self.acoustic, truncate=False), 0.0)

    def test_far_field_incoming_term_vanishes(self):
        s, v = self.sigma, self.acoustic.v_s
        for r in (10 * s, 20 * s, 40 * s):
            t = np.linspace((r - 3 * s) / v, (r + 3 * s) / v, 2001)
            outgoing = pressure_outgoing(self.source, r, t, self.acoustic, truncate=False)
            full = pressure_full(self.source, r, t, self.acoustic)
            peak = np.max(np.abs(outgoing))
            self.assertLessEqual(np.max(np.abs(full - outgoing)), 1e-30 * peak)

    def test_oracle_single_voxel(self):
        sigma = 11.7 * SAMPLE_PITCH
        distance = 400.3 * SAMPLE_PITCH
        grid, array, acoustic, _ = get_single_source_case(distance, sigma)
        image = VoxelImage(grid, np.ones(1))
        trace = oracle_forward(image, array, acoustic, sigma).data[0]
        source = GaussianSource((0.0, 0.0, 0.0), 1.0, sigma)
        expected = pressure_outgoing(source, distance, acoustic.sample_times(), acoustic)
        assert_allclose(trace, expected, rtol=1e-12, atol=1e-12 * np.abs(expected).max())

        # zero crossing brackets the arrival within one sample
        arrival = distance / acoustic.v_s / acoustic.dt
        crossings = np.nonzero((trace[:-1] > 0) & (trace[1:] <= 0))[0]
        self.assertEqual(len(crossings), 1)
        self.assertLessEqual(abs(crossings[0] - arrival), 1.0)

    def test_oracle_zero_and_superposition(self):
        grid, array, acoustic = get_small_case(dims=(2, 2, 2))
        sigma = grid.spacing
        zero = oracle_forward(VoxelImage.zeros(grid), array, acoustic, sigma)
        self.assertTrue(np.all(zero.data == 0.0))

        x1 = np.zeros(grid.n_voxels)
        x2 = np.zeros(grid.n_voxels)
        x1[1] = 0.7
        x2[6] = 1.3
        y1 = oracle_forward(VoxelImage(grid, x1), array, acoustic, sigma).data
        y2 = oracle_forward(VoxelImage(grid, x2), array, acoustic, sigma).data
        y12 = oracle_forward(VoxelImage(grid, x1 + x2), array, acoustic, sigma).data
        assert_allclose(y12, y1 + y2, rtol=0, atol=1e-14 * np.abs(y12).max())

        y_lin = oracle_forward(VoxelImage(grid, 2.0 * x1 - 3.0 * x2), array, acoustic, sigma).data
        self.assertLessEqual(rel_l2(y_lin, 2.0 * y1 - 3.0 * y2), 1e-12)

    def test_oracle_pool_matches_in_process(self):
        grid, array, acoustic = get_small_case(dims=(2, 2, 2), n_detectors=6)
        image = VoxelImage(grid, np.random.default_rng(3).random(grid.n_voxels))
        serial = oracle_forward(image, array, acoustic, grid.spacing)
        pooled = oracle_forward(image, array, acoustic, grid.spacing, workers=2, chunk_size=2)
        assert_array_equal(pooled.data, serial.data)

    def test_oracle_geometry_conflict(self):
        grid = VoxelGrid.centered((3, 3, 3), 1e-3)
        array = DetectorArray([[0.0, 0.0, 0.0]])
        with self.assertRaises(GeometryConflictError):
            oracle_forward(VoxelImage(grid, np.ones(27)), array, get_acoustic(), 1e-3)

    def test_oracle_inverse_distance_decay(self):
        sigma = 11.7 * SAMPLE_PITCH
        grid = VoxelGrid((1, 1, 1), SAMPLE_PITCH, (0.0, 0.0, 0.0))
        array = DetectorArray([[0.0, 0.0, 400 * SAMPLE_PITCH], [0.0, 0.0, 800 * SAMPLE_PITCH]])
        acoustic = get_acoustic(1024)
        data = oracle_forward(VoxelImage(grid, np.ones(1)), array, acoustic, sigma).data
        ratio = np.abs(data[0]).max() / np.abs(data[1]).max()
        self.assertAlmostEqual(ratio, 2.0, delta=0.02)


class OperatorTestCase(unittest.TestCase):
    def tearDown(self):
        configure_runtime(deterministic=True)

    def test_dot_test_random_configurations(self):
        rng = np.random.default_rng(20240501)
        for trial in range(20):
            grid, array, acoustic, sigma = get_random_case(rng)
            assa = compute_assa(sigma, acoustic)
            report = adjoint_dot_test(grid, array, acoustic, assa, trials=2, seed=trial, sigma=sigma)
            self.assertLessEqual(report.max_discrepancy, 1e-10, msg=f"configuration {trial}")

    def test_dot_test_reference_size(self):
        grid = VoxelGrid.centered((8, 8, 8), 4e-4)
        array = build_hemispherical_array(8e-3, (0.0, 0.0, 0.0), 16)
        acoustic = get_acoustic(256)
        assa = compute_assa(grid.spacing, acoustic)
        first = adjoint_dot_test(grid, array, acoustic, assa, trials=3, seed=11)
        second = adjoint_dot_test(grid, array, acoustic, assa, trials=3, seed=11)
        self.assertLessEqual(first.max_discrepancy, 1e-10)
        self.assertEqual(first.discrepancies, second.discrepancies)

    def test_dot_test_fast_mode_single_precision(self):
        configure_runtime(deterministic=False)
        self.assertFalse(RUNTIME.deterministic)
        grid, array, acoustic = get_small_case(dims=(4, 4, 4), n_detectors=8, n_t=256)
        assa = compute_assa(grid.spacing, acoustic)
        report = adjoint_dot_test(grid, array, acoustic, assa, trials=3, seed=5, dtype=np.float32)
        self.assertLessEqual(report.max_discrepancy, 1e-4)

    def test_dense_matrix_equivalence(self):
        grid, array, acoustic = get_small_case()
        assa = compute_assa(grid.spacing, acoustic)
        matrix = build_dense_matrix(grid, array, acoustic, assa)
        self.assertEqual(matrix.shape, (array.n_detectors * acoustic.n_t, grid.n_voxels))

        model = SystemModel(grid, array, acoustic)
        rng = np.random.default_rng(7)
        x = rng.standard_normal(grid.n_voxels)
        delta = rng.standard_normal((array.n_detectors, acoustic.n_t))
        self.assertLessEqual(rel_l2(model.forward(x).ravel(), matrix @ x), 1e-12)
        self.assertLessEqual(rel_l2(model.adjoint(delta), matrix.T @ delta.ravel()), 1e-12)

    def test_dense_matrix_single_voxel(self):
        grid = VoxelGrid((1, 1, 1), 4e-4)
        array = DetectorArray([[0.0, 0.0, 5e-3], [3e-3, 0.0, 4e-3]])
        acoustic = get_acoustic(128)
        assa = compute_assa(grid.spacing, acoustic)
        matrix = build_dense_matrix(grid, array, acoustic, assa)
        expected = SystemModel(grid, array, acoustic).forward(np.ones(1)).ravel()
        assert_array_equal(matrix[:, 0], expected)

    def test_dense_matrix_cap(self):
        grid, array, acoustic = get_small_case()
        assa = compute_assa(grid.spacing, acoustic)
        with self.assertRaises(ResourceLimitError):
            build_dense_matrix(grid, array, acoustic, assa, cap=1000)

    def test_linearity_and_homogeneity(self):
        grid, array, acoustic = get_small_case(dims=(4, 3, 2))
        model = SystemModel(grid, array, acoustic)
        rng = np.random.default_rng(1)
        x1, x2 = rng.random(grid.n_voxels), rng.random(grid.n_voxels)
        self.assertLessEqual(rel_l2(model.forward(x1 + x2), model.forward(x1) + model.forward(x2)), 1e-12)
        self.assertLessEqual(rel_l2(model.forward(2.5 * x1), 2.5 * model.forward(x1)), 1e-12)
        d1 = rng.standard_normal((array.n_detectors, acoustic.n_t))
        d2 = rng.standard_normal((array.n_detectors, acoustic.n_t))
        self.assertLessEqual(rel_l2(model.adjoint(d1 + d2), model.adjoint(d1) + model.adjoint(d2)), 1e-12)

    def test_zero_image_gives_zero_signals(self):
        grid, array, acoustic = get_small_case()
        model = SystemModel(grid, array, acoustic)
        y = model.forward_image(VoxelImage.zeros(grid))
        self.assertIsInstance(y, SignalSet)
        self.assertTrue(np.all(y.data == 0.0))

    def test_scatter_and_correlate_are_transposes(self):
        acoustic = get_acoustic(64)
        sigma = 2e-4
        assa = compute_assa(sigma, acoustic)
        taps = make_kernel_taps(assa, sigma, acoustic)
        rng = np.random.default_rng(2)
        u = rng.standard_normal((3, assa.n_t_up))
        w = rng.standard_normal((3, assa.n_t_up))
        lhs = float(np.sum(scatter_convolve(UpsampledBuffer(u), taps).data * w))
        rhs = float(np.sum(u * correlate(UpsampledBuffer(w), taps).data))
        self.assertLessEqual(abs(lhs - rhs), 1e-12 * np.linalg.norm(u) * np.linalg.norm(w) * np.abs(taps.taps).sum())

    def test_stage_functions_match_model(self):
        grid, array, acoustic = get_small_case()
        model = SystemModel(grid, array, acoustic)
        rng = np.random.default_rng(4)
        x = rng.random(grid.n_voxels)
        delta = rng.standard_normal((array.n_detectors, acoustic.n_t))
        y = forward(VoxelImage(grid, x), model.tof, model.taps, model.assa)
        assert_array_equal(y.data, model.forward(x))
        g = adjoint(SignalSet(delta, acoustic), model.tof, model.taps, model.assa, grid)
        assert_array_equal(g.values, model.adjoint(delta))

    def test_signal_shape_is_checked(self):
        with self.assertRaises(InvalidArgumentError):
            SignalSet(np.zeros((2, 10)), get_acoustic(12))
        with self.assertRaises(InvalidArgumentError):
            SignalSet(np.array([[0.0, np.nan]]))

    def test_deterministic_repeat_is_bitwise(self):
        grid, array, acoustic = get_small_case(dims=(5, 4, 3), n_detectors=9)
        model = SystemModel(grid, array, acoustic)
        x = np.random.default_rng(8).random(grid.n_voxels)
        assert_array_equal(model.forward(x), model.forward(x))
        y = model.forward(x)
        assert_array_equal(model.adjoint(y), model.adjoint(y))

    def test_single_source_matches_oracle(self):
        sigma = 11.7 * SAMPLE_PITCH
        distance = 400.3 * SAMPLE_PITCH
        grid, array, acoustic, model = get_single_source_case(distance, sigma)
        self.assertEqual(model.assa.alpha, 1)
        oracle = oracle_forward(VoxelImage(grid, np.ones(1)), array, acoustic, sigma).data
        self.assertLessEqual(rel_l2(model.forward(np.ones(1)), oracle), 5e-2)

    def test_supersampling_ladder_converges(self):
        sigma = 11.7 * SAMPLE_PITCH
        for m in range(10):
            distance = (400.27 + 0.01 * m) * SAMPLE_PITCH
            errors = []
            for alpha_scale in (1, 2, 4):
                grid, array, acoustic, model = get_single_source_case(distance, sigma, alpha_scale=alpha_scale)
                oracle = oracle_forward(VoxelImage(grid, np.ones(1)), array, acoustic, sigma).data
                errors.append(rel_l2(model.forward(np.ones(1)), oracle))
            self.assertLessEqual(errors[0], 5e-2, msg=f"case {m}")
            self.assertLess(errors[1], errors[0], msg=f"case {m}")
            self.assertLess(errors[2], errors[1], msg=f"case {m}")

    def test_upsampled_path_tracks_oracle(self):
        for sigma, alpha in ((62.5e-6, 4), (2e-4, 2)):
            # error is first order in the snap to the nearest upsampled tick
            half_tick = 0.5 * SAMPLE_PITCH / (alpha * sigma)
            worst = {1: 0.0, 4: 0.0}
            for m in range(10):
                distance = (400.05 + 0.1 * m) * SAMPLE_PITCH
                for alpha_scale in (1, 4):
                    grid, array, acoustic, model = get_single_source_case(distance, sigma, alpha_scale=alpha_scale)
                    self.assertEqual(model.assa.alpha, alpha * alpha_scale)
                    oracle = oracle_forward(VoxelImage(grid, np.ones(1)), array, acoustic, sigma).data
                    error = rel_l2(model.forward(np.ones(1)), oracle)
                    worst[alpha_scale] = max(worst[alpha_scale], error)
                    if alpha_scale == 1:
                        self.assertLessEqual(error, 2.0 * half_tick, msg=f"sigma {sigma} case {m}")
            self.assertLess(worst[4], worst[1], msg=f"sigma {sigma}")

    def test_inverse_distance_decay(self):
        sigma = 11.7 * SAMPLE_PITCH
        grid = VoxelGrid((1, 1, 1), SAMPLE_PITCH, (0.0, 0.0, 0.0))
        array = DetectorArray([[0.0, 0.0, 400 * SAMPLE_PITCH], [0.0, 0.0, 800 * SAMPLE_PITCH]])
        model = SystemModel(grid, array, get_acoustic(1024), sigma=sigma)
        y = model.forward(np.ones(1))
        self.assertAlmostEqual(np.abs(y[0]).max() / np.abs(y[1]).max(), 2.0, places=9)


if __name__ == '__main__':
    unittest.main()
