# -*- coding: utf-8 -*-


import json
import math
import os
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from gpair.bench import bench_image, run_bench
from gpair.cli import cli_main
from gpair.cls_def import AcousticConfig, ArrayLabel, Axis, PhantomKind
from gpair.exceptions import DegenerateMaskError, FileFormatError, InvalidArgumentError
from gpair.fileio import (export_raw, read_detectors, read_signals, read_trace_csv, read_volume, write_detectors,
                          write_pgm, write_signals, write_trace_csv, write_volume)
from gpair.geometry import VoxelGrid, VoxelImage, build_hemispherical_array
from gpair.metrics import (evaluate, evaluate_with_maps, largest_component_fraction, mse_psnr,
                           reference_free_metrics, ssim3d, threshold_masks)
from gpair.operators import SignalSet, SystemModel
from gpair.phantom import (PhantomSpec, add_noise, generate_phantom, max_projection, slice_extract, slice_insert,
                           tube_segments)
from gpair.recon import IterationRecord
from gpair.utils import PSNR_CAP_DB, configure_runtime, get_chunks, kv_line


def get_grid(dims=(8, 7, 6)):
    return VoxelGrid.centered(dims, 4e-4)


def get_signals(dtype=np.float64, n_d=3, n_t=40, seed=0):
    rng = np.random.default_rng(seed)
    acoustic = AcousticConfig(v_s=1480.0, f_s=25e6, n_t=n_t, t0=1e-6)
    return SignalSet(rng.standard_normal((n_d, n_t)).astype(dtype), acoustic)


def get_cube_volume(shape=(10, 10, 10)):
    volume = np.zeros(shape)
    volume[3:6, 3:6, 3:6] = 1.0
    return volume


class MetricsTestCase(unittest.TestCase):
    def test_identical_volumes(self):
        ref = generate_phantom(PhantomSpec(seed=1), get_grid())
        mse, psnr = mse_psnr(ref, ref)
        self.assertEqual(mse, 0.0)
        self.assertEqual(psnr, PSNR_CAP_DB)
        self.assertAlmostEqual(ssim3d(ref, ref), 1.0, places=12)

    def test_mse_psnr_values(self):
        ref = np.ones(10)
        x = np.ones(10)
        x[4] = 0.5
        mse, psnr = mse_psnr(x, ref)
        self.assertAlmostEqual(mse, 0.025, places=15)
        self.assertAlmostEqual(psnr, 10.0 * math.log10(40.0), places=10)

    def test_max_normalization(self):
        ref = generate_phantom(PhantomSpec(seed=2), get_grid())
        scaled = VoxelImage(ref.grid, 3.5 * ref.values)
        self.assertEqual(mse_psnr(scaled, ref)[1], PSNR_CAP_DB)
        self.assertLess(mse_psnr(scaled, ref, normalize=False)[1], PSNR_CAP_DB)

    def test_ssim_drops_with_noise(self):
        ref = generate_phantom(PhantomSpec(seed=3), get_grid((12, 12, 12)))
        rng = np.random.default_rng(0)
        noisy = VoxelImage(ref.grid, ref.values + 0.2 * ref.values.max() * rng.standard_normal(ref.grid.n_voxels))
        value = ssim3d(noisy, ref)
        self.assertLess(value, 0.99)
        self.assertGreater(value, -1.0)

    def test_ssim_single_window_by_hand(self):
        rng = np.random.default_rng(5)
        ref = rng.random((11, 11, 11))
        x = ref + 0.1 * rng.standard_normal(ref.shape)
        k = np.arange(-5, 6, dtype=np.float64)
        w = np.exp(-k * k / (2 * 1.5 ** 2))
        w /= w.sum()
        window = w[:, None, None] * w[None, :, None] * w[None, None, :]
        a, b = x / x.max(), ref / ref.max()
        mu1, mu2 = np.sum(window * a), np.sum(window * b)
        s11 = np.sum(window * a * a) - mu1 ** 2
        s22 = np.sum(window * b * b) - mu2 ** 2
        s12 = np.sum(window * a * b) - mu1 * mu2
        expected = ((2 * mu1 * mu2 + 1e-4) * (2 * s12 + 9e-4)) / ((mu1 ** 2 + mu2 ** 2 + 1e-4) * (s11 + s22 + 9e-4))
        self.assertAlmostEqual(ssim3d(x, ref), expected, places=12)

    def test_shape_mismatch(self):
        with self.assertRaises(InvalidArgumentError):
            mse_psnr(np.zeros((2, 2)), np.zeros((2, 3)))
        with self.assertRaises(InvalidArgumentError):
            ssim3d(np.zeros(4), np.zeros(5))

    def test_reference_free_values(self):
        volume = np.zeros((6, 6, 6))
        volume[2:4, 2:4, 2:4] = 1.0
        checker = (np.add.outer(np.arange(6), np.arange(6)) % 2) * 0.2
        volume[0] = checker
        signal = np.zeros(volume.shape, dtype=bool)
        signal[2:4, 2:4, 2:4] = True
        bg = np.zeros(volume.shape, dtype=bool)
        bg[0] = True
        cnr, snr, bg_std, sharpness = reference_free_metrics(volume, signal, bg)
        self.assertAlmostEqual(bg_std, 0.1, places=12)
        self.assertAlmostEqual(cnr, 9.0, places=10)
        self.assertAlmostEqual(snr, 10.0, places=10)
        self.assertGreater(sharpness, 0.0)

    def test_degenerate_masks(self):
        volume = get_cube_volume()
        signal = volume > 0
        with self.assertRaises(DegenerateMaskError):
            reference_free_metrics(volume, signal, np.zeros(volume.shape, dtype=bool))
        with self.assertRaises(DegenerateMaskError):
            reference_free_metrics(volume, signal, signal)
        # constant background
        with self.assertRaises(DegenerateMaskError):
            reference_free_metrics(volume, signal, ~signal)
        with self.assertRaises(InvalidArgumentError):
            reference_free_metrics(volume, signal[:5], ~signal[:5])

    def test_threshold_masks(self):
        volume = get_cube_volume()
        signal, bg = threshold_masks(volume)
        self.assertTrue(signal.any())
        self.assertTrue(bg.any())
        self.assertFalse(np.any(signal & bg))
        self.assertFalse(np.any(signal & (volume < 0.1)))
        with self.assertRaises(DegenerateMaskError):
            threshold_masks(np.zeros((4, 4, 4)))
        with self.assertRaises(DegenerateMaskError):
            threshold_masks(np.ones((4, 4, 4)))

    def test_largest_component_fraction(self):
        volume = np.zeros((8, 8, 8))
        volume[1:3, 1:3, 1:3] = 1.0
        volume[6, 6, 6] = 1.0
        self.assertAlmostEqual(largest_component_fraction(volume), 8.0 / 9.0, places=15)
        volume[3, 3, 3] = 1.0
        self.assertAlmostEqual(largest_component_fraction(volume), 9.0 / 10.0, places=15)
        self.assertEqual(largest_component_fraction(np.zeros((3, 3, 3))), 0.0)

    def test_evaluate_reports(self):
        grid = get_grid((10, 10, 10))
        ref = generate_phantom(PhantomSpec(seed=4, count=1), grid)
        report = evaluate(ref, ref)
        self.assertEqual(report.psnr, PSNR_CAP_DB)
        self.assertIsNone(report.cnr)

        full = evaluate_with_maps(ref, ref, *threshold_masks(ref))
        self.assertEqual(set(full), {"volume", "z_map"})
        self.assertEqual(full["z_map"]["psnr"], PSNR_CAP_DB)
        self.assertIsNotNone(full["volume"]["cnr"])
        self.assertEqual(set(evaluate_with_maps(ref)), {"volume"})


class PhantomTestCase(unittest.TestCase):
    def test_deterministic_and_nonnegative(self):
        grid = get_grid()
        for kind in PhantomKind:
            a = generate_phantom(PhantomSpec(kind=kind, seed=7, count=2), grid)
            b = generate_phantom(PhantomSpec(kind=kind, seed=7, count=2), grid)
            assert_array_equal(a.values, b.values)
            self.assertTrue(np.all(a.values >= 0.0), msg=str(kind))
            self.assertGreater(a.values.max(), 0.0, msg=str(kind))
        a = generate_phantom(PhantomSpec(seed=1), grid)
        b = generate_phantom(PhantomSpec(seed=2), grid)
        self.assertFalse(np.array_equal(a.values, b.values))

    def test_kind_from_string(self):
        self.assertIs(PhantomSpec(kind="grid-of-points").kind, PhantomKind.grid_of_points)
        with self.assertRaises(InvalidArgumentError):
            PhantomSpec(kind="spheres")
        with self.assertRaises(InvalidArgumentError):
            PhantomSpec(count=0)
        with self.assertRaises(InvalidArgumentError):
            generate_phantom("blobs", get_grid())

    def test_tube_branches_are_connected(self):
        spec = PhantomSpec(kind=PhantomKind.tubes, seed=5, count=3, segments=2)
        segments = tube_segments(spec, get_grid(), np.random.default_rng(spec.seed))
        self.assertEqual(len(segments), 6)
        for branch in range(1, 3):
            start = segments[2 * branch][0]
            earlier = [p for a, b in segments[:2 * branch] for p in (a, b)]
            self.assertTrue(any(np.array_equal(start, p) for p in earlier))

    def test_max_projection(self):
        image = generate_phantom(PhantomSpec(seed=0), get_grid())
        z_map = max_projection(image, Axis.z)
        self.assertEqual(z_map.shape, (7, 8))
        assert_array_equal(z_map, image.volume.max(axis=0))
        assert_array_equal(max_projection(image, "x"), image.volume.max(axis=2))

    def test_slices(self):
        image = generate_phantom(PhantomSpec(seed=0), get_grid())
        before = image.values.copy()
        plane = np.full((6, 8), 2.0)
        updated = slice_insert(image, "y", 3, plane)
        assert_array_equal(slice_extract(updated, "y", 3), plane)
        assert_array_equal(image.values, before)
        assert_array_equal(slice_extract(updated, "y", 2), slice_extract(image, "y", 2))
        with self.assertRaises(InvalidArgumentError):
            slice_extract(image, "z", 6)
        with self.assertRaises(InvalidArgumentError):
            slice_insert(image, "z", 0, np.zeros((6, 8)))
        with self.assertRaises(InvalidArgumentError):
            slice_extract(image, "w", 0)

    def test_add_noise(self):
        rng = np.random.default_rng(1)
        acoustic = AcousticConfig(n_t=4000)
        signals = SignalSet(rng.standard_normal((4, 4000)), acoustic)
        peak = float(np.max(np.abs(signals.data)))
        noisy = add_noise(signals, 10.0, seed=3)
        assert_allclose(np.std(noisy.data - signals.data), peak / 10.0, rtol=0.05)
        assert_array_equal(noisy.data, add_noise(signals, 10.0, seed=3).data)

        quiet = SignalSet(np.zeros((2, 4000), dtype=np.float32), acoustic)
        assert_array_equal(add_noise(quiet, 5.0).data, quiet.data)
        self.assertEqual(add_noise(get_signals(np.float32), 5.0).data.dtype, np.float32)
        with self.assertRaises(InvalidArgumentError):
            add_noise(signals, 0.0)


class FileIOTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.dir, name)

    def test_volume_round_trip(self):
        grid = VoxelGrid((3, 4, 5), 2.5e-4, (1e-3, -2e-3, 0.1))
        rng = np.random.default_rng(0)
        for dtype in (np.float32, np.float64):
            image = VoxelImage(grid, rng.standard_normal(grid.n_voxels).astype(dtype))
            write_volume(self.path("v.gpv"), image)
            back = read_volume(self.path("v.gpv"))
            self.assertEqual(back.grid, grid)
            self.assertEqual(back.dtype, dtype)
            assert_array_equal(back.values, image.values)

    def test_signal_round_trip(self):
        positions = build_hemispherical_array(0.02, (0.0, 0.0, 0.0), 3).positions
        for dtype in (np.float32, np.float64):
            signals = get_signals(dtype)
            write_signals(self.path("s.gps"), signals, positions=positions)
            back, back_positions = read_signals(self.path("s.gps"))
            self.assertEqual(back.acoustic, signals.acoustic)
            self.assertEqual(back.data.dtype, dtype)
            assert_array_equal(back.data, signals.data)
            assert_array_equal(back_positions, positions)
        write_signals(self.path("n.gps"), get_signals())
        self.assertIsNone(read_signals(self.path("n.gps"))[1])

    def test_detector_round_trip(self):
        array = build_hemispherical_array(0.03, (0.0, 0.0, 0.01), 9)
        write_detectors(self.path("d.gpd"), array)
        back = read_detectors(self.path("d.gpd"))
        self.assertIs(back.label, ArrayLabel.hemispherical)
        assert_array_equal(back.positions, array.positions)

    def test_bad_files(self):
        image = VoxelImage(get_grid(), np.ones(get_grid().n_voxels))
        write_volume(self.path("v.gpv"), image)
        with self.assertRaises(FileFormatError):
            read_signals(self.path("v.gpv"))

        with open(self.path("v.gpv"), "rb") as f:
            blob = f.read()
        with open(self.path("short.gpv"), "wb") as f:
            f.write(blob[:-8])
        with self.assertRaises(FileFormatError):
            read_volume(self.path("short.gpv"))
        with open(self.path("long.gpv"), "wb") as f:
            f.write(blob + b"\0" * 8)
        with self.assertRaises(FileFormatError):
            read_volume(self.path("long.gpv"))
        with open(self.path("junk.bin"), "wb") as f:
            f.write(b"JUNK")
        with self.assertRaises(FileFormatError):
            export_raw(self.path("junk.bin"), self.path("junk"))

    def test_export_raw(self):
        grid = get_grid((2, 3, 4))
        image = VoxelImage(grid, np.arange(grid.n_voxels, dtype=np.float64))
        write_volume(self.path("v.gpv"), image)
        raw_path, txt_path = export_raw(self.path("v.gpv"), self.path("v"))
        with open(raw_path, "rb") as f:
            assert_array_equal(np.frombuffer(f.read(), dtype="<f8"), image.values)
        with open(txt_path, "r", encoding="utf-8") as f:
            meta = dict(line.strip().split("=", 1) for line in f if line.strip())
        self.assertEqual(meta["kind"], "volume")
        self.assertEqual(meta["dims"], "2,3,4")
        self.assertEqual(meta["dtype"], "f64")

        write_signals(self.path("s.gps"), get_signals(np.float32), positions=np.zeros((3, 3)) + np.arange(3)[:, None])
        raw_path, _ = export_raw(self.path("s.gps"), self.path("s"))
        self.assertEqual(os.path.getsize(raw_path), 3 * 40 * 4)
        self.assertTrue(os.path.exists(self.path("s.positions.raw")))

    def test_trace_csv(self):
        trace = [IterationRecord(t, 1.0 / (t + 1), 0.9 / (t + 1), 0.1 / (t + 1), 0.05, 1.25) for t in range(4)]
        write_trace_csv(trace, self.path("trace.csv"))
        columns = read_trace_csv(self.path("trace.csv"))
        self.assertEqual(columns["iter"], [0.0, 1.0, 2.0, 3.0])
        self.assertEqual(columns["loss"], [r.loss for r in trace])
        with open(self.path("bad.csv"), "w", encoding="utf-8") as f:
            f.write("iter,loss\n0,1.0\n")
        with self.assertRaises(FileFormatError):
            read_trace_csv(self.path("bad.csv"))

    def test_pgm(self):
        write_pgm(self.path("m.pgm"), [[0.0, 1.0], [2.0, 3.0]])
        with open(self.path("m.pgm"), "rb") as f:
            blob = f.read()
        self.assertEqual(blob, b"P5\n2 2\n255\n" + bytes([0, 85, 170, 255]))
        with self.assertRaises(InvalidArgumentError):
            write_pgm(self.path("bad.pgm"), np.zeros(4))


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()
        configure_runtime(deterministic=True)

    def path(self, name):
        return os.path.join(self.dir, name)

    def test_pipeline(self):
        grid = ["--grid", "16,16,16", "--spacing", "4e-4"]
        array = ["--array", "hemi", "--radius", "8e-3", "--n", "8"]
        self.assertEqual(cli_main(["phantom", *grid, "--count", "1", "--seed", "3", "--out", self.path("truth.gpv"),
                                   "--map-dir", self.path("maps")]), 0)
        self.assertTrue(os.path.exists(os.path.join(self.path("maps"), "map_z.pgm")))
        self.assertEqual(cli_main(["simulate", "--volume", self.path("truth.gpv"), "--out", self.path("b.gps"),
                                   *array, "--nt", "256", "--precision", "double"]), 0)
        self.assertEqual(cli_main(["reconstruct", "--signals", self.path("b.gps"), "--out", self.path("x.gpv"),
                                   "--trace", self.path("trace.csv"), *grid, "--iters", "5", "--precision", "double",
                                   "--deterministic"]), 0)
        self.assertEqual(len(read_trace_csv(self.path("trace.csv"))["iter"]), 5)
        self.assertEqual(read_volume(self.path("x.gpv")).grid.dims, (16, 16, 16))
        self.assertEqual(cli_main(["metrics", "--volume", self.path("x.gpv"), "--reference", self.path("truth.gpv"),
                                   "--auto-masks", "--json", self.path("m.json")]), 0)
        with open(self.path("m.json"), "r", encoding="utf-8") as f:
            report = json.load(f)
        self.assertIn("psnr", report["volume"])
        self.assertIn("z_map", report)
        self.assertEqual(cli_main(["backproject", "--signals", self.path("b.gps"), "--out", self.path("g.gpv"),
                                   *grid, "--normalize"]), 0)
        self.assertAlmostEqual(float(np.max(np.abs(read_volume(self.path("g.gpv")).values))), 1.0, places=6)
        self.assertEqual(cli_main(["convert", "--input", self.path("x.gpv"), "--out-prefix", self.path("x")]), 0)
        self.assertTrue(os.path.exists(self.path("x.raw")))

    def test_reconstruct_with_preset(self):
        preset = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "configs", "desk_tubes.json")
        grid = ["--grid", "6,6,6", "--spacing", "4e-4"]
        self.assertEqual(cli_main(["phantom", *grid, "--kind", "tubes", "--out", self.path("t.gpv")]), 0)
        self.assertEqual(cli_main(["simulate", "--volume", self.path("t.gpv"), "--out", self.path("t.gps"),
                                   "--radius", "6e-3", "--n", "6", "--nt", "256"]), 0)
        self.assertEqual(cli_main(["reconstruct", "--signals", self.path("t.gps"), "--out", self.path("r.gpv"),
                                   *grid, "--config", preset, "--iters", "3"]), 0)

    def test_dottest_and_bench_verbs(self):
        small = ["--grid", "4,4,4", "--radius", "6e-3", "--n", "6", "--nt", "256", "--deterministic"]
        self.assertEqual(cli_main(["dottest", *small, "--trials", "2", "--precision", "double"]), 0)
        self.assertEqual(cli_main(["bench", *small, "--repeat", "1"]), 0)

    def test_exit_codes(self):
        self.assertEqual(cli_main([]), 2)
        self.assertEqual(cli_main(["no-such-verb"]), 2)
        self.assertEqual(cli_main(["reconstruct"]), 2)
        self.assertEqual(cli_main(["maps", "--volume", self.path("missing.gpv"), "--out-dir", self.dir]), 1)
        with open(self.path("junk.gpv"), "wb") as f:
            f.write(b"GPS1")
        self.assertEqual(cli_main(["metrics", "--volume", self.path("junk.gpv")]), 1)
        self.assertEqual(cli_main(["dottest", "--grid", "4,4,4", "--n", "0"]), 1)


class BenchTestCase(unittest.TestCase):
    def test_run_bench_reports_every_stage(self):
        grid = VoxelGrid.centered((4, 4, 4), 4e-4)
        model = SystemModel(grid, build_hemispherical_array(6e-3, (0.0, 0.0, 0.0), 6), AcousticConfig(n_t=256))
        timings = run_bench(model, bench_image(grid, seed=1), repeat=1)
        for stage in ("tof_table", "kernel_taps", "project_up", "scatter_convolve", "decimate", "zero_fill",
                      "correlate", "backproject", "forward", "adjoint", "forward_pairs_per_s", "adjoint_pairs_per_s"):
            self.assertIn(stage, timings)
            self.assertGreaterEqual(timings[stage], 0.0)
        image = bench_image(grid, np.float32, seed=1)
        self.assertEqual(image.dtype, np.float32)
        self.assertTrue(np.all(image.values >= 0.0))


class UtilsTestCase(unittest.TestCase):
    def test_kv_line(self):
        self.assertEqual(kv_line("stage", name="forward", wall_ms=1.5, dims=(2, 3)),
                         "stage name=forward wall_ms=1.5 dims=2,3")
        self.assertEqual(kv_line("done"), "done")

    def test_get_chunks(self):
        self.assertEqual(list(get_chunks([1, 2, 3, 4, 5], 2)), [[1, 2], [3, 4], [5]])
        self.assertEqual(list(get_chunks([], 3)), [])
        with self.assertRaises(InvalidArgumentError):
            list(get_chunks([1], 0))

    def test_configure_runtime(self):
        with self.assertRaises(InvalidArgumentError):
            configure_runtime(threads=0)
        self.assertTrue(configure_runtime(deterministic=True).deterministic)


if __name__ == '__main__':
    unittest.main()
