"""Spherical harmonics basis and color recovery."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wildsplat.shmath import (
    Direction,
    ShCoefficients,
    eval_sh_basis,
    eval_sh_basis_grad,
    n_coeffs,
    sh_to_color,
    sh_to_color_gradient,
    sigmoid,
)

C0 = 0.28209479177387814
C1 = 0.4886025119029199


def unit(rng, n=1):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestBasis:
    def test_dc_constant(self, rng):
        for v in unit(rng, 20):
            out = eval_sh_basis(Direction(*v), 0)
            assert out.shape == (1,)
            assert out[0] == pytest.approx(C0, abs=1e-12)

    def test_band1_at_z(self):
        out = eval_sh_basis(Direction(0, 0, 1), 1)
        # band 1 is proportional to (-y, z, -x)
        np.testing.assert_allclose(out[1:], [0.0, C1, 0.0], atol=1e-12)

    def test_band1_directionality(self, rng):
        for v in unit(rng, 10):
            out = eval_sh_basis(Direction(*v), 1)
            np.testing.assert_allclose(
                out[1:], [-C1 * v[1], C1 * v[2], -C1 * v[0]], atol=1e-12
            )

    def test_parity(self):
        plus = eval_sh_basis(Direction(1, 0, 0), 2)
        minus = eval_sh_basis(Direction(-1, 0, 0), 2)
        np.testing.assert_allclose(plus[4:9], minus[4:9], atol=1e-12)   # even band
        np.testing.assert_allclose(plus[1:4], -minus[1:4], atol=1e-12)  # odd band

    def test_degree_out_of_range(self):
        with pytest.raises(ValueError):
            eval_sh_basis(Direction(0, 0, 1), 4)
        with pytest.raises(ValueError):
            eval_sh_basis(Direction(0, 0, 1), -1)

    def test_orthonormality_monte_carlo(self):
        # 10^6 uniform sphere samples; (z, phi) strata keep the estimator's
        # own noise far below the 3e-3 tolerance
        rng = np.random.default_rng(0)
        side = 1000
        gi, gj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        n = side * side
        z = ((gi.reshape(-1) + rng.uniform(size=n)) / side) * 2.0 - 1.0
        phi = 2 * np.pi * (gj.reshape(-1) + rng.uniform(size=n)) / side
        r = np.sqrt(np.maximum(1 - z * z, 0))
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        basis = eval_sh_basis(dirs, 3)
        gram = (basis[:, :, None] * basis[:, None, :]).mean(axis=0) * 4 * np.pi
        assert np.abs(gram - np.eye(n_coeffs(3))).max() < 3e-3

    def test_band_energy_rotationally_invariant(self, rng):
        dirs = unit(rng, 200)
        basis = eval_sh_basis(dirs, 3)
        for band, (lo, hi) in enumerate([(0, 1), (1, 4), (4, 9), (9, 16)]):
            energy = (basis[:, lo:hi] ** 2).sum(axis=1)
            expected = (2 * band + 1) / (4 * np.pi)
            assert np.abs(energy - expected).max() < 1e-9

    def test_basis_jacobian_matches_fd(self, rng):
        dirs = unit(rng, 5)
        _, jac = eval_sh_basis_grad(dirs, 3)
        eps = 1e-6
        for i, d in enumerate(dirs):
            for axis in range(3):
                dp, dm = d.copy(), d.copy()
                dp[axis] += eps
                dm[axis] -= eps
                fd = (eval_sh_basis(dp, 3) - eval_sh_basis(dm, 3)) / (2 * eps)
                np.testing.assert_allclose(jac[i, :, axis], fd, atol=1e-6)


class TestDirection:
    def test_normalizes(self):
        d = Direction(3.0, 0.0, 4.0)
        assert abs(d.x**2 + d.y**2 + d.z**2 - 1.0) < 1e-9

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            Direction(0.0, 0.0, 0.0)


class TestShToColor:
    def test_zero_coeffs_gray(self, rng):
        coeffs = ShCoefficients(3, np.zeros((3, 16)))
        for v in unit(rng, 5):
            np.testing.assert_allclose(sh_to_color(coeffs, Direction(*v)), 0.5, atol=1e-12)

    def test_dc_sigmoid_identity(self):
        values = np.zeros((3, 16))
        values[0, 0] = 1.0 / C0
        color = sh_to_color(ShCoefficients(3, values), Direction(0.3, -0.2, 0.93))
        assert color[0] == pytest.approx(0.7310586, abs=1e-6)
        assert color[1] == pytest.approx(0.5)

    def test_matches_double_loop_oracle(self, rng):
        # independent oracle: explicit (l, m) summation per channel
        values = rng.normal(size=(3, 16))
        d = unit(rng)[0]
        coeffs = ShCoefficients(3, values)
        basis = eval_sh_basis(Direction(*d), 3)
        expected = np.empty(3)
        for ch in range(3):
            acc = 0.0
            idx = 0
            for ell in range(4):
                for m in range(-ell, ell + 1):
                    acc += values[ch, idx] * basis[idx]
                    idx += 1
            expected[ch] = 1.0 / (1.0 + np.exp(-acc))
        np.testing.assert_allclose(sh_to_color(coeffs, Direction(*d)), expected, atol=1e-12)

    def test_output_strictly_inside_unit_interval(self, rng):
        values = rng.normal(size=(3, 16)) * 3
        color = sh_to_color(ShCoefficients(3, values), Direction(*unit(rng)[0]))
        assert np.all(color > 0) and np.all(color < 1)

    def test_invalid_coeff_shape(self):
        with pytest.raises(ValueError):
            ShCoefficients(3, np.zeros((3, 9)))
        with pytest.raises(ValueError):
            ShCoefficients(2, np.full((3, 9), np.nan))


class TestShToColorGradient:
    def test_zero_upstream(self, rng):
        coeffs = ShCoefficients(3, rng.normal(size=(3, 16)))
        grad = sh_to_color_gradient(coeffs, Direction(0, 1, 0), np.zeros(3))
        assert np.all(grad == 0)

    def test_dc_analytic(self, rng):
        values = rng.normal(size=(3, 16)) * 0.3
        d = Direction(*unit(rng)[0])
        coeffs = ShCoefficients(3, values)
        upstream = np.array([1.0, 0.0, 0.0])
        grad = sh_to_color_gradient(coeffs, d, upstream)
        color = sh_to_color(coeffs, d)
        expected = upstream[0] * color[0] * (1 - color[0]) * C0
        assert grad[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_matches_finite_differences_every_coefficient(self, rng):
        values = rng.normal(size=(3, 16)) * 0.5
        d = Direction(*unit(rng)[0])
        upstream = rng.normal(size=3)
        grad = sh_to_color_gradient(ShCoefficients(3, values), d, upstream)
        eps = 1e-5
        for ch in range(3):
            for k in range(16):
                vp, vm = values.copy(), values.copy()
                vp[ch, k] += eps
                vm[ch, k] -= eps
                fd = (
                    (sh_to_color(ShCoefficients(3, vp), d)
                     - sh_to_color(ShCoefficients(3, vm), d)) * upstream
                ).sum() / (2 * eps)
                assert abs(fd - grad[ch, k]) / max(abs(fd), 1e-12) < 1e-6


class TestSigmoid:
    @given(st.floats(min_value=-500, max_value=500))
    @settings(max_examples=50, deadline=None)
    def test_stable_and_bounded(self, x):
        y = sigmoid(np.array([x]))[0]
        assert 0.0 <= y <= 1.0
        assert np.isfinite(y)
