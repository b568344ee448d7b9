import math

import numpy as np
import pytest

from core.errors import SeparationError
from greens import coupling, coupling_gradient, coupling_matrix, green_tensor, pair_terms
from model import CIRCULAR_DIPOLE, K0, X_DIPOLE, Z_DIPOLE, two_atom_dipole

DIPOLES = [Z_DIPOLE, CIRCULAR_DIPOLE, X_DIPOLE] + [two_atom_dipole(t) for t in (0.0, math.pi / 4, math.pi / 2)]


def _finite_difference(r, dipole, h=1e-6):
    grad = np.zeros(3, dtype=complex)
    for i in range(3):
        step = np.zeros(3)
        step[i] = h
        grad[i] = (coupling(r + step, dipole) - coupling(r - step, dipole)) / (2 * h)
    return grad


class TestCouplingValues:
    def test_one_wavelength_z_dipole(self):
        c = coupling([1.0, 0.0, 0.0], Z_DIPOLE)
        assert c.real == pytest.approx(-0.116337, rel=1e-4)
        assert c.imag == pytest.approx(-0.0189972, rel=1e-4)

    def test_half_wavelength_z_dipole(self):
        c = coupling([0.5, 0.0, 0.0], Z_DIPOLE)
        assert c.real == pytest.approx(0.214551, rel=1e-4)
        assert c.imag == pytest.approx(0.0759909, abs=1e-7)
        assert -2 * c.imag == pytest.approx(-0.151982, abs=1e-6)

    def test_matches_perpendicular_decay_closed_form(self):
        for x in (0.7, math.pi, 5.3, 20.0):
            c = coupling([x / K0, 0.0, 0.0], Z_DIPOLE)
            gamma = 1.5 * (math.sin(x) / x + math.cos(x) / x ** 2 - math.sin(x) / x ** 3)
            assert -2 * c.imag == pytest.approx(gamma, rel=1e-12, abs=1e-14)

    def test_agrees_with_green_tensor_contraction(self):
        r = np.array([0.37, -0.21, 0.0])
        d = np.array(CIRCULAR_DIPOLE)
        g = green_tensor(r)
        expected = -(3 * math.pi / K0) * np.conj(d) @ g @ d
        assert coupling(r, d) == pytest.approx(complex(expected), rel=1e-12)

    def test_collective_decay_bounded(self):
        x = np.linspace(0.1, 100.0, 2000)
        for dipole in (Z_DIPOLE, CIRCULAR_DIPOLE, X_DIPOLE):
            values, _ = pair_terms(np.column_stack([x / K0, np.zeros_like(x)]), dipole, with_gradient=False)
            assert np.all(np.abs(2 * values.imag) <= 1.0 + 1e-12)

    def test_far_field_envelope(self):
        for x in (1e2, 1e3, 1e4):
            assert abs(coupling([x / K0, 0.0, 0.0], Z_DIPOLE)) * x < 1.0

    def test_circular_dipole_rotation_invariant(self):
        rng = np.random.default_rng(7)
        base = coupling([0.8, 0.0, 0.0], CIRCULAR_DIPOLE)
        for phi in rng.uniform(0, 2 * math.pi, 10):
            r = 0.8 * np.array([math.cos(phi), math.sin(phi), 0.0])
            assert coupling(r, CIRCULAR_DIPOLE) == pytest.approx(base, abs=1e-12)


class TestGreenTensor:
    def test_symmetric(self):
        g = green_tensor([0.3, 0.2, 0.1])
        np.testing.assert_allclose(g, g.T, atol=1e-15)

    def test_decays(self):
        g = green_tensor([1e4 / K0, 0.0, 0.0])
        assert np.max(np.abs(g * 4 * math.pi / K0)) < 1e-3

    def test_zero_separation(self):
        with pytest.raises(SeparationError):
            green_tensor([0.0, 0.0, 0.0])


class TestGradient:
    @pytest.mark.parametrize("dipole", DIPOLES)
    @pytest.mark.parametrize("x", [0.5, math.pi / 2, math.pi, 2 * math.pi, 4 * math.pi, 30.0])
    def test_matches_finite_differences(self, dipole, x):
        direction = np.array([math.cos(0.4), math.sin(0.4), 0.0])
        r = direction * x / K0
        analytic = coupling_gradient(r, dipole)
        numeric = _finite_difference(r, dipole)
        assert np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic) < 1e-5

    def test_odd_under_reflection(self):
        r = np.array([0.45, 0.1, 0.0])
        np.testing.assert_allclose(coupling_gradient(-r, Z_DIPOLE), -coupling_gradient(r, Z_DIPOLE), atol=1e-14)

    def test_transverse_components_vanish(self):
        grad = coupling_gradient([0.6, 0.0, 0.0], Z_DIPOLE)
        assert abs(grad[1]) < 1e-14
        assert abs(grad[2]) < 1e-14

    def test_zero_separation(self):
        with pytest.raises(SeparationError):
            coupling_gradient([0.0, 0.0, 0.0], Z_DIPOLE)


class TestCouplingMatrix:
    def test_single_atom(self):
        m = coupling_matrix([[0.0, 0.0]], Z_DIPOLE)
        assert m.c.shape == (1, 1)
        assert m.c[0, 0] == -0.5j

    def test_pair_matches_coupling(self):
        m = coupling_matrix([[0.0, 0.0], [0.5, 0.0]], Z_DIPOLE)
        expected = coupling([0.5, 0.0, 0.0], Z_DIPOLE)
        assert m.c[0, 1] == pytest.approx(expected, abs=1e-15)
        assert m.c[1, 0] == pytest.approx(expected, abs=1e-15)

    def test_symmetry_and_diagonal(self):
        rng = np.random.default_rng(11)
        positions = rng.uniform(0, 3, size=(8, 2))
        for dipole in (Z_DIPOLE, CIRCULAR_DIPOLE, X_DIPOLE):
            m = coupling_matrix(positions, dipole)
            np.testing.assert_allclose(m.c, m.c.T, atol=1e-12)
            np.testing.assert_array_equal(np.diag(m.c), -0.5j)
            np.testing.assert_allclose(m.grad_c, -np.transpose(m.grad_c, (1, 0, 2)), atol=1e-14)

    def test_gradient_rows_match_pair_gradient(self):
        positions = np.array([[0.0, 0.0], [0.4, 0.3], [1.1, -0.2]])
        m = coupling_matrix(positions, X_DIPOLE)
        grad = coupling_gradient(np.append(positions[2] - positions[0], 0.0), X_DIPOLE)
        np.testing.assert_allclose(m.grad_c[2, 0], grad[:2], rtol=1e-12)

    def test_coincident_atoms_name_the_pair(self):
        positions = [[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]
        with pytest.raises(SeparationError) as info:
            coupling_matrix(positions, Z_DIPOLE)
        assert info.value.pair == (1, 2)
        assert info.value.to_dict()["pair"] == [1, 2]

    def test_near_field_guard(self):
        with pytest.raises(SeparationError):
            coupling_matrix([[0.0, 0.0], [5e-4, 0.0]], Z_DIPOLE)
