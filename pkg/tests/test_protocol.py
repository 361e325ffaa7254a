"""Ground-truth synthesis, metrics, matching, and file round-trips."""

import itertools

import numpy as np
import pytest

from prime_unmix.errors import CubeFormatError, ShapeError
from prime_unmix.mixmodel import ImageCube, build_spectral_response, mix
from prime_unmix.protocol import (BandRangeSpec, MetricsReport, lins_protocol,
                                  match_endmembers, read_cube, read_matrix_csv,
                                  rmse, sam, synth_reference, write_cube,
                                  write_matrix_csv, write_pgm)


# ---------------------------------------------------------------------------
# synthesis


def test_synth_pure_pixels_planted():
    a_ref, s, cube = synth_reference(3, 32, 32, 8, 5)
    assert np.all(s.max(axis=1) >= 0.999)


def test_synth_columns_on_simplex():
    _, s, _ = synth_reference(5, 16, 16, 6, 4)
    assert np.abs(s.sum(axis=0) - 1.0).max() < 1e-12
    assert s.min() >= 0


def test_synth_deterministic():
    t1 = synth_reference(9, 16, 16, 6, 3)
    t2 = synth_reference(9, 16, 16, 6, 3)
    assert np.array_equal(t1[0], t2[0])
    assert np.array_equal(t1[1], t2[1])
    assert np.array_equal(t1[2].data, t2[2].data)


def test_synth_signatures_positive_and_smooth():
    a_ref, _, _ = synth_reference(1, 16, 16, 16, 4)
    assert a_ref.min() > 0
    # sums of wide bumps: consecutive-band jumps stay bounded
    rel_jump = np.abs(np.diff(a_ref, axis=0)) / a_ref.max(axis=0)
    assert rel_jump.max() < 0.5


def test_synth_rejects_more_sources_than_bands():
    with pytest.raises(ShapeError):
        synth_reference(0, 16, 16, 4, 5)


def test_protocol_uniform_downsampling():
    a_ref = np.ones((6, 1))
    s = np.ones((1, 4))
    zm, b_gt, _ = lins_protocol(a_ref, s, 2, 2, 2)
    assert np.array_equal(b_gt, np.full((3, 1), 2.0))
    assert np.array_equal(zm.matrix(), np.full((3, 4), 2.0))


def test_protocol_commutes_with_mixing(rng):
    a_ref = rng.uniform(0.1, 1, (8, 3))
    s = rng.dirichlet(np.ones(3), size=12).T
    zm, b_gt, _ = lins_protocol(a_ref, s, 2, 3, 4)
    d = build_spectral_response(4, 2)
    want = d.apply(mix(a_ref, s, 3, 4).data)
    assert np.abs(zm.data - want).max() < 1e-12


def test_protocol_band_ranges_match_uniform(rng):
    a_ref = rng.uniform(0.1, 1, (4, 3))
    s = rng.dirichlet(np.ones(3), size=6).T
    uniform = lins_protocol(a_ref, s, 2, 2, 3)
    ranged = lins_protocol(a_ref, s, 2, 2, 3,
                           ranges=BandRangeSpec(((1, 2), (3, 4))))
    assert np.array_equal(uniform[1], ranged[1])
    assert np.array_equal(uniform[0].data, ranged[0].data)


def test_band_ranges_validate():
    with pytest.raises(ValueError):
        BandRangeSpec(((1, 3), (2, 4)))  # overlap
    with pytest.raises(ValueError):
        BandRangeSpec(((3, 4), (1, 2)))  # not ascending
    a_ref = np.ones((4, 2))
    with pytest.raises(ShapeError):
        lins_protocol(a_ref, np.ones((2, 2)) / 2, 2, 1, 2,
                      ranges=BandRangeSpec(((1, 2), (3, 6))))


def test_protocol_nonneg(rng):
    a_ref, s, _ = synth_reference(2, 8, 8, 8, 3)
    zm, _, _ = lins_protocol(a_ref, s, 2, 8, 8)
    assert zm.data.min() >= 0


# ---------------------------------------------------------------------------
# matching and metrics


def test_match_identity(rng):
    b = rng.uniform(0.1, 1, (5, 4))
    assert np.array_equal(match_endmembers(b, b), np.arange(4))


def test_match_inverts_swap(rng):
    b = rng.uniform(0.1, 1, (5, 4))
    swap = [2, 0, 3, 1]
    perm = match_endmembers(b[:, swap], b)
    assert np.array_equal(np.array(swap)[perm], np.arange(4))
    assert np.abs(b[:, swap][:, perm] - b).max() == 0


def test_match_beats_all_permutations(rng):
    # exhaustive oracle for N <= 6
    for _ in range(5):
        b_gt = rng.uniform(0.1, 1, (6, 5))
        b_est = np.abs(b_gt[:, rng.permutation(5)]
                       + 0.3 * rng.standard_normal((6, 5)))
        perm = match_endmembers(b_est, b_gt)
        got = sam(b_est[:, perm], b_gt)
        best = min(sam(b_est[:, list(p)], b_gt)
                   for p in itertools.permutations(range(5)))
        assert got <= best + 1e-12


def test_sam_identity_and_orthogonal():
    b = np.array([[1.0], [0.0]])
    assert sam(b, b) == 0.0
    assert abs(sam(np.array([[0.0], [1.0]]), b) - 90.0) < 1e-12


def test_sam_scale_invariant(rng):
    b = rng.uniform(0.1, 1, (6, 4))
    assert sam(2.0 * b, b) < 1e-6
    scales = rng.uniform(0.5, 3.0, 4)
    assert sam(b * scales, b) < 1e-6


def test_sam_rejects_zero_column():
    b = np.ones((3, 2))
    bad = b.copy()
    bad[:, 1] = 0.0
    with pytest.raises(ValueError, match="zero-norm"):
        sam(bad, b)


def test_rmse_examples(rng):
    s = rng.uniform(0, 1, (4, 25))
    assert rmse(s, s) == 0.0
    assert abs(rmse(s + 0.1, s) - 0.1) < 1e-12
    # scalar-loop oracle
    t = rng.uniform(0, 1, (4, 25))
    total = 0.0
    for i in range(4):
        for j in range(25):
            total += (s[i, j] - t[i, j]) ** 2
    assert abs(rmse(s, t) - np.sqrt(total / 100)) < 1e-12


def test_rmse_symmetric(rng):
    s = rng.uniform(0, 1, (3, 10))
    t = rng.uniform(0, 1, (3, 10))
    assert rmse(s, t) == rmse(t, s)


def test_metrics_report_validates():
    MetricsReport(method="x", sam_deg=5.0, rmse=0.1, time_sec=1.0, seed=0)
    with pytest.raises(ValueError):
        MetricsReport(method="x", sam_deg=181.0, rmse=0.1, time_sec=1.0, seed=0)
    with pytest.raises(ValueError):
        MetricsReport(method="x", sam_deg=5.0, rmse=-0.1, time_sec=1.0, seed=0)


# ---------------------------------------------------------------------------
# file formats


def test_cube_roundtrip_bit_exact(tmp_path, rng):
    cube = ImageCube(rng.uniform(0, 1, (3, 4, 5)))
    write_cube(tmp_path / "c", cube)
    back = read_cube(tmp_path / "c")
    assert np.array_equal(back.data, cube.data)


def test_cube_f32_declared(tmp_path, rng):
    cube = ImageCube(rng.uniform(0, 1, (2, 3, 3)).astype(np.float32).astype(float))
    write_cube(tmp_path / "c", cube, dtype="f32le")
    back = read_cube(tmp_path / "c")
    assert np.array_equal(back.data, cube.data)


def test_cube_bad_magic(tmp_path):
    (tmp_path / "c.json").write_text('{"magic": "NOPE"}')
    (tmp_path / "c.bin").write_bytes(b"")
    with pytest.raises(CubeFormatError, match="magic"):
        read_cube(tmp_path / "c")


def test_cube_payload_size_mismatch(tmp_path, rng):
    cube = ImageCube(rng.uniform(0, 1, (2, 2, 2)))
    write_cube(tmp_path / "c", cube)
    payload = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(payload[:-8])
    with pytest.raises(CubeFormatError, match="payload"):
        read_cube(tmp_path / "c")


def test_matrix_csv_roundtrip(tmp_path, rng):
    m = rng.uniform(0, 1, (6, 4))
    write_matrix_csv(tmp_path / "b.csv", m)
    back = read_matrix_csv(tmp_path / "b.csv")
    assert np.array_equal(back, m)
    header = (tmp_path / "b.csv").read_text().splitlines()[0]
    assert header == "band,src1,src2,src3,src4"


def test_matrix_csv_requires_header(tmp_path):
    (tmp_path / "b.csv").write_text("1,2\n3,4\n")
    with pytest.raises(CubeFormatError, match="header"):
        read_matrix_csv(tmp_path / "b.csv")


def test_pgm_format(tmp_path, rng):
    img = rng.uniform(0, 1, (5, 7))
    write_pgm(tmp_path / "m.pgm", img)
    raw = (tmp_path / "m.pgm").read_bytes()
    assert raw.startswith(b"P5\n7 5\n255\n")
    pixels = np.frombuffer(raw.split(b"255\n", 1)[1], dtype=np.uint8)
    assert pixels.size == 35
    assert pixels.min() == 0 and pixels.max() == 255  # min-max normalized
