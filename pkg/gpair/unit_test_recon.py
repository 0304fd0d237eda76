# -*- coding: utf-8 -*-


import math
import os
import unittest
from dataclasses import astuple

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from gpair.cls_def import AcousticConfig, PhantomKind, Precision
from gpair.exceptions import InvalidArgumentError, NumericalFailureError
from gpair.geometry import VoxelGrid, VoxelImage, build_hemispherical_array
from gpair.operators import SystemModel
from gpair.phantom import PhantomSpec, generate_phantom
from gpair.recon import (AdamState, LatentImage, ReconConfig, adam_step, cawr_lr, gpair_reconstruct, loss_and_grad,
                         npc_apply, npc_backprop, single_pass_reconstruct)
from gpair.regularization import (CROSS_PAIRS, VOLUME_AXES, RegConfig, cross_difference, cross_difference_adjoint,
                                  forward_difference, forward_difference_adjoint, hessian_value_grad,
                                  second_difference, second_difference_adjoint, tv_value_grad, vcr_value_grad)

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "configs")

FD_STEP = 1e-5

# smoothing scale of 1e-2 keeps central differences well conditioned on any random draw
FD_EPS_REG = 1e-4


def get_random_image(dims, seed):
    grid = VoxelGrid(dims, 1e-3)
    rng = np.random.default_rng(seed)
    return VoxelImage(grid, rng.uniform(0.2, 1.2, grid.n_voxels))


def get_recon_case(dims=(8, 8, 8), n_detectors=16, radius=8e-3, n_t=256, seed=0):
    grid = VoxelGrid.centered(dims, 4e-4)
    array = build_hemispherical_array(radius, (0.0, 0.0, 0.0), n_detectors)
    acoustic = AcousticConfig(v_s=1500.0, f_s=20e6, n_t=n_t)
    model = SystemModel(grid, array, acoustic)
    truth = generate_phantom(PhantomSpec(kind=PhantomKind.blobs, seed=seed, count=3), grid)
    return grid, array, acoustic, model, truth


def get_small_config(**overrides):
    base = {"i_max": 60, "eta_max": 0.05, "eta_min": 1e-4, "t_0": 60, "t_mult": 1}
    base.update(overrides)
    return ReconConfig.from_dict(base)


def finite_difference(fn, values, step=FD_STEP):
    grad = np.zeros_like(values)
    shifted = values.copy()
    for i in range(values.size):
        shifted[i] = values[i] + step
        up = fn(shifted)
        shifted[i] = values[i] - step
        down = fn(shifted)
        shifted[i] = values[i]
        grad[i] = (up - down) / (2.0 * step)
    return grad


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


class DifferenceOperatorTestCase(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(12)
        self.vol = rng.standard_normal((3, 5, 4))
        self.u = rng.standard_normal((3, 5, 4))

    def test_forward_difference_adjoint(self):
        for axis in VOLUME_AXES:
            lhs = np.sum(forward_difference(self.vol, axis) * self.u)
            rhs = np.sum(self.vol * forward_difference_adjoint(self.u, axis))
            self.assertAlmostEqual(lhs, rhs, places=12)

    def test_second_difference_adjoint(self):
        for axis in VOLUME_AXES:
            lhs = np.sum(second_difference(self.vol, axis) * self.u)
            rhs = np.sum(self.vol * second_difference_adjoint(self.u, axis))
            self.assertAlmostEqual(lhs, rhs, places=12)

    def test_cross_difference_adjoint(self):
        for a, b in CROSS_PAIRS:
            lhs = np.sum(cross_difference(self.vol, a, b) * self.u)
            rhs = np.sum(self.vol * cross_difference_adjoint(self.u, a, b))
            self.assertAlmostEqual(lhs, rhs, places=12)

    def test_boundaries_are_zero(self):
        self.assertTrue(np.all(forward_difference(self.vol, 0)[-1] == 0.0))
        self.assertTrue(np.all(second_difference(self.vol, 1)[:, 0] == 0.0))
        self.assertTrue(np.all(second_difference(self.vol, 1)[:, -1] == 0.0))
        self.assertTrue(np.all(cross_difference(self.vol, 1, 2)[:, -1, :] == 0.0))
        self.assertTrue(np.all(cross_difference(self.vol, 1, 2)[:, :, -1] == 0.0))


class RegularizerTestCase(unittest.TestCase):
    def test_constant_image_tv(self):
        grid = VoxelGrid((4, 4, 4), 1e-3)
        eps = 1e-8
        value, grad = tv_value_grad(VoxelImage(grid, np.full(grid.n_voxels, 0.7)), eps)
        assert_allclose(value, grid.n_voxels * math.sqrt(eps), rtol=1e-12)
        self.assertTrue(np.all(grad.values == 0.0))

    def test_affine_image_hessian(self):
        grid = VoxelGrid((5, 4, 3), 1e-3)
        ix, iy, iz = np.meshgrid(np.arange(5), np.arange(4), np.arange(3), indexing="ij")
        volume = (0.3 * ix - 0.2 * iy + 0.1 * iz + 1.0).transpose(2, 1, 0)
        eps = 1e-8
        value, _ = hessian_value_grad(VoxelImage.from_volume(grid, volume), eps)
        assert_allclose(value, grid.n_voxels * math.sqrt(eps), rtol=1e-12)

    def test_tv_gradient_matches_finite_differences(self):
        for dims, seed in (((4, 4, 4), 0), ((5, 3, 2), 1)):
            image = get_random_image(dims, seed)
            _, grad = tv_value_grad(image, FD_EPS_REG)
            fd = finite_difference(lambda v: tv_value_grad(VoxelImage(image.grid, v), FD_EPS_REG)[0], image.values)
            self.assertLessEqual(rel_err(grad.values, fd), 1e-6, msg=str(dims))

    def test_hessian_gradient_matches_finite_differences(self):
        for dims, seed in (((4, 4, 4), 2), ((5, 3, 2), 3)):
            image = get_random_image(dims, seed)
            _, grad = hessian_value_grad(image, FD_EPS_REG)
            fd = finite_difference(lambda v: hessian_value_grad(VoxelImage(image.grid, v), FD_EPS_REG)[0], image.values)
            self.assertLessEqual(rel_err(grad.values, fd), 1e-6, msg=str(dims))

    def test_vcr_combines_terms(self):
        image = get_random_image((4, 4, 4), 4)
        cfg = RegConfig(lam=0.5, beta=0.3, eps_reg=FD_EPS_REG)
        h_value, h_grad = hessian_value_grad(image, FD_EPS_REG)
        tv_value, tv_grad = tv_value_grad(image, FD_EPS_REG)
        value, grad = vcr_value_grad(image, cfg)
        assert_allclose(value, h_value + 0.3 * tv_value, rtol=1e-14)
        assert_allclose(grad.values, h_grad.values + 0.3 * tv_grad.values, rtol=1e-14)
        fd = finite_difference(lambda v: vcr_value_grad(VoxelImage(image.grid, v), cfg)[0], image.values)
        self.assertLessEqual(rel_err(grad.values, fd), 1e-6)

        value, _ = vcr_value_grad(image, RegConfig(lam=0.5, beta=0.0, eps_reg=FD_EPS_REG))
        self.assertEqual(value, h_value)

    def test_invalid_config(self):
        with self.assertRaises(InvalidArgumentError):
            RegConfig(lam=-1.0)
        with self.assertRaises(InvalidArgumentError):
            RegConfig(eps_reg=0.0)
        with self.assertRaises(InvalidArgumentError):
            tv_value_grad(get_random_image((2, 2, 2), 0), 0.0)


class OptimizerTestCase(unittest.TestCase):
    def test_npc(self):
        grid = VoxelGrid((2, 1, 1), 1e-3)
        x = npc_apply(LatentImage(grid, np.array([0.0, 1.0])))
        self.assertEqual(x.values[0], 1e-8 ** 2)
        self.assertEqual(x.values[1], (1.0 + 1e-8) ** 2)
        self.assertTrue(np.all(x.values > 0))
        grad_z = npc_backprop(np.array([3.0, -1.0]), LatentImage(grid, np.array([0.0, 1.0])))
        assert_allclose(grad_z, [3.0 * 2e-8, -2.0 * (1.0 + 1e-8)])

    def test_cawr_schedule(self):
        cfg = ReconConfig(eta_max=0.1, eta_min=1e-4, t_0=50, t_mult=2)
        self.assertAlmostEqual(cawr_lr(0, cfg), 0.1, places=15)
        self.assertEqual(cawr_lr(50, cfg), cawr_lr(0, cfg))
        self.assertEqual(cawr_lr(25, cfg), 1e-4 + 0.5 * (0.1 - 1e-4) * (1.0 + math.cos(math.pi * 25 / 50)))
        self.assertEqual(cawr_lr(75, cfg), 1e-4 + 0.5 * (0.1 - 1e-4) * (1.0 + math.cos(math.pi * 25 / 100)))
        flat = ReconConfig(eta_max=0.2, eta_min=0.0, t_0=10, t_mult=1)
        assert_allclose(cawr_lr(5, flat), 0.1, rtol=1e-15)
        with self.assertRaises(InvalidArgumentError):
            cawr_lr(-1, cfg)

    def test_adam_first_step_is_sign_like(self):
        cfg = ReconConfig()
        z = np.array([0.5, 0.5, 0.5])
        grad = np.array([2.0, -3.0, 0.0])
        z_new, state = adam_step(z, grad, AdamState.zeros(3), 0.01, cfg)
        assert_allclose(z_new, [0.49, 0.51, 0.5], rtol=1e-7)
        self.assertEqual(state.t, 1)
        assert_allclose(state.m, 0.1 * grad)
        assert_allclose(state.v, 0.001 * grad * grad)

    def test_config_round_trip_and_overrides(self):
        cfg = ReconConfig.from_dict({"i_max": 10, "lambda": 1e-3, "beta": 0.5}, eta_max=0.2, t_0=None)
        self.assertEqual(cfg.i_max, 10)
        self.assertEqual(cfg.reg.lam, 1e-3)
        self.assertEqual(cfg.eta_max, 0.2)
        self.assertEqual(cfg.t_0, 50)
        self.assertNotIn("seed", cfg.to_dict())
        data = cfg.to_dict()
        self.assertEqual(data["lambda"], 1e-3)
        self.assertEqual(data["precision"], "double")
        self.assertEqual(ReconConfig.from_dict(data), cfg)
        with self.assertRaises(InvalidArgumentError):
            ReconConfig.from_dict({"iterations": 3})
        with self.assertRaises(InvalidArgumentError):
            ReconConfig.from_dict({"seed": 0})
        with self.assertRaises(InvalidArgumentError):
            ReconConfig(eta_min=0.5, eta_max=0.1)
        with self.assertRaises(InvalidArgumentError):
            ReconConfig(t_0=0)

    def test_presets_load(self):
        for name in ("desk_blobs.json", "desk_tubes.json"):
            cfg = ReconConfig.from_json(os.path.join(CONFIG_DIR, name))
            self.assertEqual(cfg.i_max, 200)
            self.assertEqual(cfg.precision, Precision.double)
            self.assertGreater(cfg.reg.lam, 0.0)
        cfg = ReconConfig.from_json(os.path.join(CONFIG_DIR, "desk_blobs.json"), i_max=5)
        self.assertEqual(cfg.i_max, 5)


class LossTestCase(unittest.TestCase):
    def test_loss_gradient_matches_finite_differences(self):
        for seed in range(3):
            grid, array, acoustic, model, truth = get_recon_case(dims=(6, 6, 6), n_detectors=8, radius=6e-3, seed=seed)
            rng = np.random.default_rng(100 + seed)
            b = model.forward(truth.values)
            cfg = ReconConfig(reg=RegConfig(lam=1e-2, beta=0.5, eps_reg=FD_EPS_REG))
            z = rng.uniform(0.5, 1.5, grid.n_voxels)
            terms = loss_and_grad(LatentImage(grid, z), b, model, cfg)
            self.assertAlmostEqual(terms.loss, terms.data_term + terms.reg_term, places=12)
            fd = finite_difference(lambda v: loss_and_grad(LatentImage(grid, v), b, model, cfg).loss, z)
            self.assertLessEqual(rel_err(terms.grad_z, fd), 1e-5, msg=f"instance {seed}")

    def test_data_term_normalization(self):
        grid, array, acoustic, model, truth = get_recon_case(dims=(4, 4, 4), n_detectors=4, radius=5e-3)
        b = np.zeros((array.n_detectors, acoustic.n_t))
        z = np.sqrt(truth.values) - 1e-8
        terms = loss_and_grad(LatentImage(grid, z), b, model, ReconConfig())
        y = model.forward(npc_apply(LatentImage(grid, z)).values)
        assert_allclose(terms.data_term, np.sum(y * y) / (array.n_detectors * acoustic.n_t), rtol=1e-12)
        self.assertEqual(terms.reg_term, 0.0)

    def test_wrong_signal_shape(self):
        grid, array, acoustic, model, _ = get_recon_case(dims=(3, 3, 3), n_detectors=4, radius=5e-3)
        with self.assertRaises(InvalidArgumentError):
            loss_and_grad(LatentImage(grid, np.zeros(grid.n_voxels)), np.zeros((3, acoustic.n_t)), model, ReconConfig())


class ReconstructTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.grid, cls.array, cls.acoustic, cls.model, cls.truth = get_recon_case()
        cls.b = cls.model.forward(cls.truth.values)

    def run_recon(self, cfg, b=None, callbacks=()):
        b = self.b if b is None else b
        return gpair_reconstruct(b, self.grid, self.array, self.acoustic, cfg, callbacks=callbacks, model=self.model)

    def test_loss_decreases_and_output_is_nonnegative(self):
        result = self.run_recon(get_small_config())
        self.assertEqual(len(result.trace), 60)
        self.assertLess(result.final_loss, result.trace[0].loss)
        self.assertTrue(np.all(result.image.values >= 0.0))
        self.assertEqual([r.iter for r in result.trace], list(range(60)))

    def test_lr_trace_follows_schedule(self):
        cfg = get_small_config(i_max=30, t_0=10, t_mult=2)
        seen = []
        result = self.run_recon(cfg, callbacks=[lambda t, record, z: seen.append((t, record.lr))])
        self.assertEqual(seen, [(t, cawr_lr(t, cfg)) for t in range(30)])
        self.assertEqual([r.lr for r in result.trace], [cawr_lr(t, cfg) for t in range(30)])

    def test_zero_data_stays_at_floor(self):
        cfg = get_small_config(i_max=40)
        b = np.zeros((self.array.n_detectors, self.acoustic.n_t))
        result = self.run_recon(cfg, b=b)
        self.assertLessEqual(result.image.values.max(), 1e-16 * 1.01)
        self.assertTrue(np.all(result.image.values >= 0.0))

    def test_regularized_run_reports_reg_term(self):
        cfg = get_small_config(i_max=10, **{"lambda": 1e-6, "beta": 1.0})
        result = self.run_recon(cfg)
        for record in result.trace:
            self.assertGreater(record.reg_term, 0.0)
            self.assertAlmostEqual(record.loss, record.data_term + record.reg_term, places=12)

    def test_deterministic_repeat_matches_trace_without_wall_time(self):
        cfg = get_small_config(i_max=15)
        first = self.run_recon(cfg)
        second = self.run_recon(cfg)
        assert_array_equal(first.image.values, second.image.values)
        # wall time is the only column allowed to differ
        strip = lambda trace: [astuple(r)[:-1] for r in trace]
        self.assertEqual(strip(first.trace), strip(second.trace))

    def test_init_backprojection_starts_lower(self):
        cold = self.run_recon(get_small_config(i_max=1))
        warm = self.run_recon(get_small_config(i_max=1, init_backprojection=True))
        self.assertLess(warm.trace[0].loss, cold.trace[0].loss)

    def test_single_precision_runs(self):
        result = self.run_recon(get_small_config(i_max=5, precision="single"))
        self.assertEqual(result.image.values.dtype, np.float32)
        self.assertTrue(np.all(result.image.values >= 0.0))

    def test_non_finite_data_raises(self):
        b = self.b.copy()
        b[0, 10] = np.inf
        with self.assertRaises(NumericalFailureError) as ctx:
            self.run_recon(get_small_config(i_max=3), b=b)
        self.assertEqual(ctx.exception.iteration, 0)
        # no iterate had a finite loss yet
        self.assertIsNone(ctx.exception.last_good)

    def test_failure_reports_last_finite_latent(self):
        snapshots = []

        def poison_at(step):
            def callback(t, record, z):
                snapshots.append(z.copy())
                if t == step:
                    z[0] = np.nan
            return callback

        with self.assertRaises(NumericalFailureError) as ctx:
            self.run_recon(get_small_config(i_max=6), callbacks=[poison_at(2)])
        self.assertEqual(ctx.exception.iteration, 3)
        # the iterate evaluated at t = 2, produced by the step at t = 1
        assert_array_equal(ctx.exception.last_good, snapshots[1])
        self.assertTrue(np.all(np.isfinite(ctx.exception.last_good)))

        snapshots.clear()
        with self.assertRaises(NumericalFailureError) as ctx:
            self.run_recon(get_small_config(i_max=4), callbacks=[poison_at(3)])
        self.assertEqual(ctx.exception.iteration, 4)
        assert_array_equal(ctx.exception.last_good, snapshots[2])

    def test_single_pass(self):
        raw = single_pass_reconstruct(self.b, self.grid, self.array, self.acoustic, model=self.model)
        assert_array_equal(raw.values, self.model.adjoint(self.b))
        normalized = single_pass_reconstruct(self.b, self.grid, self.array, self.acoustic, normalize=True,
                                             model=self.model)
        self.assertAlmostEqual(float(np.abs(normalized.values).max()), 1.0, places=14)


if __name__ == '__main__':
    unittest.main()
