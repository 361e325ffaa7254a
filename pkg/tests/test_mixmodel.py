"""Mixing model and the band block-sum operator."""

import numpy as np
import pytest

from prime_unmix.errors import ShapeError
from prime_unmix.mixmodel import (ImageCube, build_spectral_response,
                                  downsample_spectral, mix)


def test_operator_p1_gamma2():
    d = build_spectral_response(1, 2)
    assert np.array_equal(d.dense(), [[1.0, 1.0]])


def test_operator_p2_gamma2_kronecker():
    d = build_spectral_response(2, 2)
    want = np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=float)
    assert np.array_equal(d.dense(), want)


@pytest.mark.parametrize("p,gamma", [(1, 1), (3, 2), (4, 3), (8, 2)])
def test_operator_row_column_structure(p, gamma):
    dm = build_spectral_response(p, gamma).dense()
    assert np.array_equal(dm.sum(axis=1), np.full(p, gamma))
    assert np.array_equal(dm.sum(axis=0), np.ones(p * gamma))
    assert np.array_equal(dm @ dm.T, gamma * np.eye(p))


@pytest.mark.parametrize("p,gamma", [(2, 2), (4, 2), (8, 3)])
def test_apply_matches_dense_product(p, gamma, rng):
    d = build_spectral_response(p, gamma)
    cube = ImageCube(rng.uniform(0, 1, (p * gamma, 3, 4)))
    got = downsample_spectral(d, cube).matrix()
    want = d.dense() @ cube.matrix()
    assert np.abs(got - want).max() < 1e-12


def test_adjoint_is_transpose(rng):
    d = build_spectral_response(3, 2)
    y = rng.uniform(0, 1, (3, 5))
    assert np.abs(d.adjoint(y) - d.dense().T @ y).max() == 0


def test_mix_identity():
    s = np.array([[0.2, 0.5], [0.3, 0.1], [0.5, 0.4]])
    cube = mix(np.eye(3), s, height=1, width=2)
    assert np.array_equal(cube.matrix(), s)


def test_mix_single_source_outer_product(rng):
    a = rng.uniform(0.1, 1, (4, 1))
    s = rng.uniform(0, 1, (1, 6))
    assert np.abs(mix(a, s) - np.outer(a, s)).max() == 0


def test_mix_matches_triple_loop_oracle(rng):
    a = rng.uniform(0, 1, (4, 3))
    s = rng.uniform(0, 1, (3, 5))
    want = np.zeros((4, 5))
    for i in range(4):
        for j in range(5):
            for k in range(3):
                want[i, j] += a[i, k] * s[k, j]
    assert np.abs(mix(a, s) - want).max() < 1e-12


def test_mix_dimension_mismatch():
    with pytest.raises(ShapeError):
        mix(np.ones((4, 3)), np.ones((2, 5)))


def test_downsample_gamma1_identity(rng):
    cube = ImageCube(rng.uniform(0, 1, (3, 2, 2)))
    out = downsample_spectral(build_spectral_response(3, 1), cube)
    assert np.array_equal(out.data, cube.data)


def test_downsample_block_sums(rng):
    bands = rng.uniform(0, 1, (4, 1, 1))
    out = downsample_spectral(build_spectral_response(2, 2), ImageCube(bands))
    assert np.allclose(out.data[0], bands[0] + bands[1])
    assert np.allclose(out.data[1], bands[2] + bands[3])


def test_downsample_band_mismatch(rng):
    with pytest.raises(ShapeError):
        downsample_spectral(build_spectral_response(3, 2),
                            ImageCube(rng.uniform(0, 1, (4, 2, 2))))


def test_downsample_commutes_with_mix(rng):
    d = build_spectral_response(4, 2)
    a = rng.uniform(0, 1, (8, 3))
    s = rng.uniform(0, 1, (3, 10))
    left = downsample_spectral(d, mix(a, s, 2, 5)).matrix()
    right = mix(d.apply(a), s)
    assert np.abs(left - right).max() < 1e-12


def test_linearity(rng):
    d = build_spectral_response(3, 2)
    x = rng.uniform(0, 1, (6, 8))
    y = rng.uniform(0, 1, (6, 8))
    lhs = d.apply(2.5 * x + 0.5 * y)
    rhs = 2.5 * d.apply(x) + 0.5 * d.apply(y)
    assert np.abs(lhs - rhs).max() < 1e-12


def test_cube_rejects_negative_and_nonfinite():
    with pytest.raises(ValueError, match="negative"):
        ImageCube(np.full((1, 2, 2), -0.5))
    with pytest.raises(ValueError, match="non-finite"):
        ImageCube(np.full((1, 2, 2), np.nan))


def test_cube_swallows_roundoff_negatives():
    cube = ImageCube(np.array([[[1.0, -1e-15]]]))
    assert cube.data.min() == 0.0
