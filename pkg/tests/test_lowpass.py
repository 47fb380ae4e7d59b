import struct

import numpy as np
import pytest

from polycf import oracles
from polycf.interactions import InteractionMatrix
from polycf.lowpass import (
    apply_low_pass,
    cache_path,
    cached_truncated_svd,
    load_projector,
    save_projector,
    truncated_svd,
)
from polycf.synthetic import random_interactions

from conftest import random_matrix


def _distinct_gap(sig, s, rel=1e-6):
    """True when the s-th singular value is separated from the (s+1)-th."""
    return s == 0 or s >= len(sig) or sig[s - 1] - sig[s] > rel * max(sig[0], 1.0)


def test_zero_cutoff(tiny):
    p = truncated_svd(tiny, 0)
    assert p.v.shape == (2, 0)
    np.testing.assert_array_equal(apply_low_pass(p, np.array([1.0, 2.0])), [0.0, 0.0])


def test_cutoff_bounds(tiny):
    with pytest.raises(ValueError):
        truncated_svd(tiny, 3)


@pytest.mark.parametrize("dense_threshold", [256, 0])
def test_projector_properties(rng, dense_threshold):
    for _ in range(15):
        D, R = random_matrix(rng)
        sig_ref, V_ref = oracles.dense_svd(D)
        for s in (1, 4, min(R.shape)):
            p = truncated_svd(R, s, seed=3, dense_threshold=dense_threshold)
            assert np.max(np.abs(p.v.T @ p.v - np.eye(s))) <= 1e-8
            P = p.v @ p.v.T
            assert np.max(np.abs(P @ P - P)) <= 1e-8
            np.testing.assert_allclose(p.sigma, sig_ref[:s], atol=1e-8)
            if _distinct_gap(sig_ref, s):
                assert oracles.subspace_angle(p.v, V_ref[:, :s]) <= 1e-6


def test_non_expansive(rng):
    _, R = random_matrix(rng)
    p = truncated_svd(R, 4)
    for _ in range(20):
        x = rng.standard_normal(R.num_items)
        assert np.linalg.norm(apply_low_pass(p, x)) <= np.linalg.norm(x) + 1e-12


def test_sign_convention(rng):
    _, R = random_matrix(rng)
    v = truncated_svd(R, 4).v
    idx = np.argmax(np.abs(v), axis=0)
    assert np.all(v[idx, np.arange(4)] > 0)


def test_randomized_path_with_spectral_gap():
    # four dense communities give four well separated leading singular values
    rng = np.random.default_rng(7)
    blocks = np.kron(np.eye(4), np.ones((100, 75)))
    D = ((rng.random(blocks.shape) < 0.25 * blocks + 0.01) > 0).astype(float)
    R = InteractionMatrix(D)
    p = truncated_svd(R, 4, seed=1, dense_threshold=0)
    sig_ref, V_ref = oracles.dense_svd(D)
    # the iteration stops on the relative change in singular values
    np.testing.assert_allclose(p.sigma, sig_ref[:4], rtol=1e-6)
    assert oracles.subspace_angle(p.v, V_ref[:, :4]) <= 1e-5


def test_cache_round_trip(tmp_path, rng):
    _, R = random_matrix(rng)
    p = truncated_svd(R, 3)
    path = tmp_path / "c.bin"
    save_projector(path, p)
    raw = path.read_bytes()
    assert raw.startswith(b"POLYCF-SVD\0")
    assert struct.unpack_from("<IQQ", raw, 11) == (1, R.num_items, 3)
    assert len(raw) == 11 + 20 + 8 * (3 + 3 * R.num_items)
    q = load_projector(path)
    np.testing.assert_array_equal(q.v, p.v)
    np.testing.assert_array_equal(q.sigma, p.sigma)


def test_cache_rejects_truncated(tmp_path, rng):
    _, R = random_matrix(rng)
    path = tmp_path / "c.bin"
    save_projector(path, truncated_svd(R, 2))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_projector(path)


def test_cached_svd_reuses_and_names_file(tmp_path, rng):
    _, R = random_matrix(rng)
    p = cached_truncated_svd(R, 2, 5, tmp_path)
    path = cache_path(tmp_path, R.content_hash(), 2, 5)
    assert path.name == f"svd_{R.content_hash()[:16]}_s2_seed5.bin"
    assert path.exists()
    q = cached_truncated_svd(R, 2, 5, tmp_path)
    np.testing.assert_array_equal(p.v, q.v)
