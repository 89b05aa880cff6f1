import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from impstab.control_space import diagonal_basis, explicit_basis
from impstab.errors import InvalidArgumentError, InvalidBasisError
from impstab.fixtures import planar_delay_system
from impstab.probe import (
    ControlSpace,
    ProbeData,
    block_matrix_exponential,
    monodromy_at,
    probe_map,
    rank_diagnostic,
    spectral_radius,
)
from impstab.spectrum import EigenWindow, eigendata

E = math.e
DIAG_ODE_BASIS = [[[-1, 0], [0, 2]], [[0, 0], [0, 1]]]


def random_block_matrix(rng, max_blocks=4):
    sizes = rng.integers(1, 3, size=rng.integers(1, max_blocks + 1))
    d = int(sizes.sum())
    lam = np.zeros((d, d))
    pos = 0
    for size in sizes:
        s = rng.uniform(-5, 5)
        if size == 1:
            lam[pos, pos] = s
        else:
            w = rng.uniform(-5, 5) or 1.0
            lam[pos:pos + 2, pos:pos + 2] = [[s, w], [-w, s]]
        pos += size
    return lam


@pytest.fixture
def ode_probe(ode_sys):
    sd = eigendata(ode_sys, 10, EigenWindow(0.0))
    return probe_map(sd, 1.0, explicit_basis(DIAG_ODE_BASIS))


@pytest.fixture
def scalar_probe(scalar_sys):
    sd = eigendata(scalar_sys, 10, EigenWindow(-1.0))
    return probe_map(sd, 0.5, explicit_basis([[[1.0]]]))


class TestBlockExponential:
    def test_zero_time(self):
        lam = random_block_matrix(np.random.default_rng(1))
        np.testing.assert_array_equal(block_matrix_exponential(lam, 0.0), np.eye(lam.shape[0]))

    def test_diagonal(self):
        np.testing.assert_allclose(block_matrix_exponential(np.diag([1.0, -1.0]), 1.0), np.diag([E, 1 / E]))

    def test_rotation(self):
        lam = np.array([[0, math.pi / 2], [-math.pi / 2, 0]])
        got = block_matrix_exponential(lam, 1.0)
        np.testing.assert_allclose(got, [[0, 1], [-1, 0]], atol=1e-15)
        np.testing.assert_allclose(got, expm(lam), atol=1e-14)

    def test_against_scaling_and_squaring(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            lam = random_block_matrix(rng)
            t = rng.uniform(-1, 1)
            ref = expm(lam * t)
            got = block_matrix_exponential(lam, t)
            assert np.max(np.abs(got - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))

    @pytest.mark.parametrize(
        "bad",
        [
            [[1.0, 2.0], [2.0, 1.0]],
            [[1.0, 2.0], [-2.0, 3.0]],
            [[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [[1.0, 2.0]],
        ],
    )
    def test_rejects_non_block(self, bad):
        with pytest.raises(InvalidArgumentError):
            block_matrix_exponential(np.array(bad), 1.0)


class TestProbeMap:
    def test_diagonal_ode_blocks(self, ode_probe):
        assert ode_probe.d == 1 and ode_probe.k == 2
        assert ode_probe.m0_blocks[0][0, 0] == pytest.approx(-E, rel=1e-14)
        assert ode_probe.m0_blocks[1][0, 0] == pytest.approx(0.0, abs=1e-15)
        assert ode_probe.z[0, 0] == pytest.approx(E, rel=1e-14)

    def test_linear_in_basis(self, planar_sys):
        # a zero matrix is not a valid basis member, so check M0(B1 - B1) via additivity
        sd = eigendata(planar_sys, 10, EigenWindow(-2.0))
        rng = np.random.default_rng(5)
        b1, b2 = rng.standard_normal((2, 2, 2))
        parts = probe_map(sd, 2.0, explicit_basis([b1, b2]))
        whole = probe_map(sd, 2.0, explicit_basis([b1 + b2, b1 - b2]))
        np.testing.assert_allclose(whole.m0_blocks[0], parts.m0_blocks[0] + parts.m0_blocks[1], atol=1e-13)
        np.testing.assert_allclose(
            whole.m0_blocks[0] + whole.m0_blocks[1] - 2 * parts.m0_blocks[0], 0.0, atol=1e-13
        )

    def test_formula(self, planar_sys):
        sd = eigendata(planar_sys, 10, EigenWindow(-2.0))
        space = diagonal_basis(2)
        probe = probe_map(sd, 2.0, space)
        for i, Bi in enumerate(space.basis):
            np.testing.assert_allclose(probe.m0_blocks[i], sd.gamma @ sd.psi0 @ Bi @ sd.phi0 @ probe.z, atol=1e-14)

    def test_vectorization_roundtrip(self, planar_sys):
        sd = eigendata(planar_sys, 10, EigenWindow(-2.0))
        probe = probe_map(sd, 2.0, diagonal_basis(2))
        for i, block in enumerate(probe.m0_blocks):
            np.testing.assert_array_equal(probe.m0_vectorized[:, i].reshape(probe.d, probe.d, order="F"), block)
        np.testing.assert_array_equal(probe.z_vectorized.reshape(probe.d, probe.d, order="F"), probe.z)
        again = ProbeData.from_vectorized(probe.m0_vectorized, probe.z_vectorized, probe.h)
        for a, b in zip(again.m0_blocks, probe.m0_blocks):
            np.testing.assert_array_equal(a, b)

    def test_dimension_mismatch(self, ode_sys):
        sd = eigendata(ode_sys, 10, EigenWindow(0.0))
        with pytest.raises(InvalidArgumentError):
            probe_map(sd, 1.0, diagonal_basis(3))
        with pytest.raises(InvalidArgumentError):
            probe_map(sd, 0.0, diagonal_basis(2))


class TestMonodromy:
    def test_zero(self, ode_probe):
        np.testing.assert_array_equal(monodromy_at(ode_probe, np.zeros(2)), ode_probe.z)

    @pytest.mark.parametrize("q", [-1.0, 0.3, 0.69881])
    def test_diagonal_ode(self, ode_probe, q):
        assert monodromy_at(ode_probe, [q, 0.0])[0, 0] == pytest.approx((1 - q) * E, abs=1e-14)

    def test_length_mismatch(self, ode_probe):
        with pytest.raises(InvalidArgumentError):
            monodromy_at(ode_probe, [1.0])

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, 2, elements=st.floats(-10, 10)),
        arrays(np.float64, 2, elements=st.floats(-10, 10)),
        st.floats(-3, 3),
        st.floats(-3, 3),
    )
    def test_affine_linearity(self, x, y, a, b):
        sd = eigendata(planar_delay_system(), 10, EigenWindow(-2.0))
        probe = probe_map(sd, 2.0, diagonal_basis(2))
        z = probe.z
        mx, my = monodromy_at(probe, x), monodromy_at(probe, y)
        lhs = monodromy_at(probe, a * x + b * y)
        rhs = a * mx + b * my + (1 - a - b) * z
        # relative to the magnitude of the terms being combined
        scale = np.max(np.abs(a * mx) + np.abs(b * my) + np.abs((1 - a - b) * z) + np.abs(lhs))
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


class TestSpectralRadius:
    def test_identity(self):
        assert spectral_radius(np.eye(3)) == pytest.approx(1.0)

    def test_rotation(self):
        assert spectral_radius([[0, 1], [-1, 0]]) == pytest.approx(1.0)

    def test_diagonal_ode_controller(self):
        m = np.diag([0.2872 * E, 2.1219 / E])
        assert spectral_radius(m) == pytest.approx(0.78066, abs=5e-5)

    def test_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            spectral_radius([[math.inf]])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(-100, 100)))
    def test_bounded_by_row_sum_norm(self, m):
        assert spectral_radius(m) <= np.max(np.abs(m).sum(axis=1)) * (1 + 1e-12) + 1e-12


class TestRankDiagnostic:
    def test_full(self, ode_probe):
        assert rank_diagnostic(ode_probe) == (1, False)

    def test_scalar_dde(self, scalar_probe):
        rank, deficient = rank_diagnostic(scalar_probe)
        assert rank <= 1 and deficient

    def test_all_zero(self):
        probe = ProbeData.from_vectorized(np.zeros((4, 3)), np.eye(2).ravel(order="F"), 1.0)
        assert rank_diagnostic(probe) == (0, True)


class TestControlSpaceType:
    def test_dependent(self):
        with pytest.raises(InvalidBasisError):
            ControlSpace(np.stack([np.eye(2), 2 * np.eye(2)]))

    def test_zero_element(self):
        with pytest.raises(InvalidBasisError):
            ControlSpace(np.zeros((1, 2, 2)))

    def test_not_square(self):
        with pytest.raises(InvalidArgumentError):
            ControlSpace(np.zeros((1, 2, 3)))

    def test_matrix(self):
        space = explicit_basis(DIAG_ODE_BASIS)
        np.testing.assert_array_equal(space.matrix([0.5, 1.0]), [[-0.5, 0], [0, 2.0]])
