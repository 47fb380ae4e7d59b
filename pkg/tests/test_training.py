import math

import numpy as np
import pytest

from polycf.basis import PolyBasis
from polycf.filters import CompositeFilter, PolynomialKernel, apply_composite
from polycf.interactions import InteractionMatrix
from polycf.lowpass import truncated_svd
from polycf.synthetic import block_dataset
from polycf.training import (
    FilterSpec,
    TrainConfig,
    TripleBatch,
    apply_kernel_dropout,
    bpr_loss,
    build_filter,
    eligible_users,
    graph_objective,
    initial_theta,
    sample_triples,
    split_validation,
    train,
    write_loss_log,
)

from conftest import FAMILIES, random_matrix

GAMMAS = (0.3, 0.4, 0.5, 0.6)


def central_difference(fun, theta, h=1e-5):
    grad = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        up, down = theta.copy(), theta.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (fun(up) - fun(down)) / (2 * h)
    return grad


def assert_gradient(analytic, numeric):
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def _filter(rng, R, family, s=3, omega=0.3):
    theta = rng.normal(0.0, 0.5, (4, 6))
    kernel = PolynomialKernel(PolyBasis(family), 5, GAMMAS, theta)
    return CompositeFilter(kernel, truncated_svd(R, s), omega)


@pytest.mark.parametrize("family", FAMILIES)
def test_graph_gradient(family, rng):
    _, R = random_matrix(rng, (8, 15), (8, 15))
    f = _filter(rng, R, family)
    z = rng.normal(0.0, math.sqrt(0.1), R.num_items)
    _, grad = graph_objective(f, R, 0, 0.1, z=z)
    numeric = central_difference(lambda t: graph_objective(f.with_theta(t), R, 0, 0.1, z=z)[0], f.kernel.theta)
    assert_gradient(grad, numeric)


@pytest.mark.parametrize("family", FAMILIES)
def test_bpr_gradient(family, rng):
    _, R = random_matrix(rng, (8, 15), (8, 15))
    f = _filter(rng, R, family)
    batch = sample_triples(R, 6, 2, rng)
    _, grad = bpr_loss(f, R, batch)
    numeric = central_difference(lambda t: bpr_loss(f.with_theta(t), R, batch)[0], f.kernel.theta)
    assert_gradient(grad, numeric)


def test_bpr_equal_scores_is_log_two(tiny):
    kernel = PolynomialKernel(PolyBasis(), 0, (0.5,), np.zeros((1, 1)))
    R = InteractionMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
    batch = TripleBatch(np.array([0]), np.array([0]), np.array([1]))
    loss, _ = bpr_loss(CompositeFilter(kernel), R, batch)
    assert loss == pytest.approx(math.log(2.0), abs=1e-15)


def test_graph_loss_non_negative(rng):
    for _ in range(30):
        _, R = random_matrix(rng)
        f = _filter(rng, R, str(rng.choice(FAMILIES)))
        loss, _ = graph_objective(f, R, int(rng.integers(R.num_users)), 0.2, rng=rng)
        assert loss >= -1e-9


def test_identity_filter_without_noise_has_zero_graph_loss(rng):
    _, R = random_matrix(rng)
    f = CompositeFilter(PolynomialKernel.identity(PolyBasis("chebyshev"), 3, GAMMAS))
    loss, _ = graph_objective(f, R, 0, 0.0)
    assert abs(loss) <= 1e-12


def test_scores_linear_in_theta(rng):
    _, R = random_matrix(rng)
    f = _filter(rng, R, "jacobi", omega=0.0)
    x = R.row(0)
    t1, t2 = rng.standard_normal((2, 4, 6))
    lhs = apply_composite(f.with_theta(2 * t1 - t2), R, x)
    rhs = 2 * apply_composite(f.with_theta(t1), R, x) - apply_composite(f.with_theta(t2), R, x)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_sampled_triples_are_valid(rng):
    D, R = random_matrix(rng, (20, 20), (30, 30))
    count = 0
    while count < 100_000:
        batch = sample_triples(R, 20, 50, rng)
        assert np.all(D[batch.users, batch.pos] == 1)
        assert np.all(D[batch.users, batch.neg] == 0)
        count += len(batch)


def test_sampling_distinct_users(rng):
    _, R = random_matrix(rng, (30, 30))
    batch = sample_triples(R, 10, 1, rng)
    assert len(np.unique(batch.users)) == 10


def test_negative_forced_to_complement():
    # user 0 misses only item 2
    R = InteractionMatrix(np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    batch = sample_triples(R, 1, 20, np.random.default_rng(0), pool=np.array([0]))
    assert set(batch.neg.tolist()) == {2}


def test_saturated_users_skipped():
    R = InteractionMatrix(np.array([[1.0, 1.0], [1.0, 0.0]]))
    batch = sample_triples(R, 2, 1, np.random.default_rng(0))
    assert batch.skipped == 1
    assert set(batch.users.tolist()) == {1}
    assert eligible_users(R).tolist() == [1]


def test_sampling_deterministic(rng):
    _, R = random_matrix(rng)
    a = sample_triples(R, 5, 3, np.random.default_rng(9))
    b = sample_triples(R, 5, 3, np.random.default_rng(9))
    for field in ("users", "pos", "neg"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))


def test_dropout_zero_rate_is_identity():
    theta = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(apply_kernel_dropout(theta, 0.0, np.random.default_rng(0)), theta)


def test_dropout_preserves_expectation():
    out = apply_kernel_dropout(np.ones((100, 1000)), 0.2, np.random.default_rng(0))
    assert set(np.unique(out)) <= {0.0, 1.25}
    assert 0.99 <= out.mean() <= 1.01


def test_initial_theta(rng):
    theta = initial_theta(PolyBasis("bernstein"), 3, 2, np.random.default_rng(0), jitter=0.0)
    np.testing.assert_array_equal(theta, np.ones((2, 4)))
    theta = initial_theta(PolyBasis("chebyshev"), 3, 2, np.random.default_rng(0), jitter=0.0)
    np.testing.assert_array_equal(theta[:, 0], [1, 1])
    np.testing.assert_array_equal(theta[:, 1:], 0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(kernel_dropout=1.0)
    with pytest.raises(ValueError):
        TrainConfig(noise_eps=-1)


def _small_block(seed=0):
    return block_dataset(seed, num_users=60, num_items=60)


def test_zero_epochs_returns_initialization():
    ds = _small_block()
    spec = FilterSpec(order=3, cutoff=4)
    p = truncated_svd(ds.train, 4)
    result = train(ds, TrainConfig(epochs=0, rng_seed=3), spec, p)
    init = build_filter(spec, p, np.random.default_rng(np.random.SeedSequence(3).spawn(4)[0]))
    assert result.log == []
    np.testing.assert_array_equal(result.filter.kernel.theta, init.kernel.theta)


def test_frozen_spec_not_trained():
    ds = _small_block()
    theta = np.zeros((4, 4))
    spec = FilterSpec(order=3, cutoff=4, trainable=False, theta=theta)
    result = train(ds, TrainConfig(epochs=5), spec, truncated_svd(ds.train, 4))
    np.testing.assert_array_equal(result.filter.kernel.theta, theta)


def test_loss_decreases():
    ds = block_dataset(0)
    cfg = TrainConfig(epochs=11, batch_users=32, learning_rate=1e-2, rng_seed=0)
    spec = FilterSpec(order=3, cutoff=8)
    log = train(ds, cfg, spec, truncated_svd(ds.train, 8)).log
    assert log[10].loss_total < log[0].loss_total


def test_training_is_reproducible():
    ds = _small_block(1)
    cfg = TrainConfig(epochs=3, batch_users=16, rng_seed=4)
    spec = FilterSpec(basis=PolyBasis("chebyshev"), order=3, cutoff=4)
    p = truncated_svd(ds.train, 4)
    a = train(ds, cfg, spec, p).filter.kernel.theta
    b = train(ds, cfg, spec, p).filter.kernel.theta
    np.testing.assert_array_equal(a, b)


def test_threaded_batches_match_serial():
    ds = _small_block(2)
    spec = FilterSpec(order=3, cutoff=4)
    p = truncated_svd(ds.train, 4)
    serial = train(ds, TrainConfig(epochs=2, batch_users=32, chunk_size=8), spec, p).filter.kernel.theta
    threaded = train(ds, TrainConfig(epochs=2, batch_users=32, chunk_size=8, workers=3), spec, p).filter.kernel.theta
    np.testing.assert_array_equal(serial, threaded)


def test_loss_log_and_validation(tmp_path):
    ds = _small_block()
    fit, val = split_validation(ds, 0.2, seed=0)
    assert fit.train.nnz + sum(len(v) for v in val.test) == ds.train.nnz
    log = train(fit, TrainConfig(epochs=2, batch_users=16), FilterSpec(order=2, cutoff=4), None, val).log
    path = tmp_path / "loss.csv"
    write_loss_log(path, log)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss_graph,loss_bpr,loss_total,val_recall20,val_ndcg20"
    assert len(lines) == 3
    assert lines[1].split(",")[4] != ""


def test_block_dataset_default_is_uniform_within_blocks():
    a = block_dataset(3)
    b = block_dataset(3, popularity_shape=None)
    assert a.train.content_hash() == b.train.content_hash()


@pytest.mark.slow
def test_training_helps_when_items_differ_in_popularity():
    # with in-block popularity there is something to learn beyond block membership
    from polycf.diagnostics import build_ablation
    from polycf.evaluation import evaluate

    spec = FilterSpec(order=5, omega=0.3, cutoff=16)
    for seed in range(3):
        ds = block_dataset(seed, popularity_shape=1.5)
        p = truncated_svd(ds.train, 16)
        cfg = TrainConfig(learning_rate=1e-2, epochs=30, batch_users=32, rng_seed=seed)
        trained = evaluate(train(ds, cfg, spec, p).filter, ds, 20).recall_at_k
        init = evaluate(train(ds, TrainConfig(epochs=0, rng_seed=seed), spec, p).filter, ds, 20).recall_at_k
        low = evaluate(train(ds, cfg, build_ablation("wo_poly", spec), p).filter, ds, 20).recall_at_k
        assert trained > init and trained > low


def test_dropout_single_coefficient_half_rate():
    rng = np.random.default_rng(11)
    draws = [apply_kernel_dropout(np.ones((1, 1)), 0.5, rng)[0, 0] for _ in range(100_000)]
    assert 0.99 <= np.mean(draws) <= 1.01


def test_dropout_unbiased_on_scores(rng):
    _, R = random_matrix(rng, (10, 10), (10, 10))
    f = _filter(rng, R, "chebyshev", omega=0.0)
    x = R.row(0)
    from polycf.filters import basis_signals, combine_basis

    b = basis_signals(f.kernel, R, x)
    exact = combine_basis(f.kernel.theta, b)
    masks = np.stack([apply_kernel_dropout(f.kernel.theta, 0.2, rng) for _ in range(10_000)])
    mc = np.mean([combine_basis(t, b) for t in masks], axis=0)
    assert np.linalg.norm(mc - exact) <= 0.01 * np.linalg.norm(exact)


def test_inference_is_dropout_free(rng):
    from polycf.evaluation import evaluate

    ds = _small_block()
    f = train(ds, TrainConfig(epochs=1, batch_users=16), FilterSpec(order=2, cutoff=4), truncated_svd(ds.train, 4)).filter
    a, b = evaluate(f, ds, 10), evaluate(f, ds, 10)
    assert (a.recall_at_k, a.ndcg_at_k) == (b.recall_at_k, b.ndcg_at_k)
