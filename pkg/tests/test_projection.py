import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapesearch.errors import DegenerateProjectionError, TrainingError
from shapesearch.projection import (
    ProjectionHeads,
    TrainConfig,
    TrainingBatch,
    contrastive_loss,
    cosine_sim,
    identity_heads,
    init_heads,
    loss_from_similarity,
    loss_gradients,
    lr_at_step,
    project_image,
    project_text,
)


def small_heads(seed=0, image_in=8, text_in=6, shared=5):
    return init_heads(seed, image_in=image_in, text_in=text_in, shared=shared)


def random_batch(seed, n, image_in=8, text_in=6):
    rng = np.random.default_rng(seed)
    return TrainingBatch(
        image_vectors=rng.standard_normal((n, image_in)),
        text_vectors=rng.standard_normal((n, text_in)),
        object_ids=tuple(f"o{i}" for i in range(n)),
    )


# --- projections ---------------------------------------------------------------

def test_project_image_identity_embedding():
    heads = identity_heads(image_in=8, text_in=6, shared=5)
    e1 = np.zeros(8)
    e1[0] = 1.0
    out = project_image(e1, heads)
    expected = np.zeros(5)
    expected[0] = 1.0
    assert np.allclose(out, expected)


def test_projection_unit_norm():
    heads = small_heads()
    rng = np.random.default_rng(1)
    for _ in range(10):
        out = project_image(rng.standard_normal(8), heads)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-6


def test_projection_scale_invariance():
    heads = small_heads()
    v = np.arange(1.0, 9.0)
    assert np.array_equal(project_image(v, heads), project_image(2.0 * v, heads))


def test_project_text_normalization_arithmetic():
    heads = identity_heads(image_in=8, text_in=6, shared=5)
    v = np.zeros(6)
    v[0], v[1] = 3.0, 4.0
    out = project_text(v, heads)
    assert np.allclose(out[:2], [0.6, 0.8])
    assert np.allclose(out[2:], 0.0)


def test_degenerate_projection_rejected():
    heads = small_heads()
    with pytest.raises(DegenerateProjectionError):
        project_image(np.zeros(8), heads)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.25, 8.0))
def test_projection_scale_invariance_property(seed, scale):
    heads = small_heads()
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(8)
    a = project_image(v, heads)
    b = project_image(scale * v, heads)
    assert np.allclose(a, b, atol=1e-12)


# --- cosine ---------------------------------------------------------------------

def test_cosine_self_orthogonal_opposite():
    x = np.zeros(4)
    x[0] = 1.0
    y = np.zeros(4)
    y[1] = 1.0
    assert cosine_sim(x, x) == pytest.approx(1.0)
    assert cosine_sim(x, y) == pytest.approx(0.0)
    assert cosine_sim(x, -x) == pytest.approx(-1.0)


def test_cosine_dimension_mismatch():
    with pytest.raises(ValueError):
        cosine_sim(np.ones(3), np.ones(4))


# --- loss closed forms ------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 4, 32])
def test_uniform_similarity_loss_is_2_ln_n(n):
    # all images identical and all texts identical -> every similarity equal
    v = np.tile(np.eye(1, 8)[0], (n, 1))
    u = np.tile(np.eye(1, 6)[0], (n, 1))
    batch = TrainingBatch(v, u, tuple(f"o{i}" for i in range(n)))
    loss = contrastive_loss(batch, small_heads()).value
    assert loss == pytest.approx(2.0 * math.log(n), abs=1e-9)


def test_perfect_separation_closed_form():
    # S = [[1,-1],[-1,1]] -> L = 2 ln(1 + e^-2) ~ 0.25386
    sims = np.array([[1.0, -1.0], [-1.0, 1.0]])
    expected = 2.0 * math.log(1.0 + math.exp(-2.0))
    assert loss_from_similarity(sims) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.2538, abs=1e-4)

    # same configuration built through the full projection pipeline
    heads = identity_heads(image_in=8, text_in=6, shared=5)
    v = np.zeros((2, 8))
    v[0, 0], v[1, 0] = 1.0, -1.0
    u = np.zeros((2, 6))
    u[0, 0], u[1, 0] = 3.0, -7.0  # scales wash out in normalization
    batch = TrainingBatch(v, u, ("a", "b"))
    assert contrastive_loss(batch, heads).value == pytest.approx(expected, abs=1e-12)


def test_loss_against_scalar_reference():
    """Independent oracle: per-sample python loops, no shared code path."""
    batch = random_batch(5, n=32)
    heads = small_heads(7)
    x = np.stack([project_image(v, heads) for v in batch.image_vectors])
    y = np.stack([project_text(u, heads) for u in batch.text_vectors])
    n = len(batch)

    total = 0.0
    for i in range(n):
        row = [math.exp(float(np.dot(x[i], y[j]))) for j in range(n)]
        col = [math.exp(float(np.dot(y[i], x[j]))) for j in range(n)]
        total += math.log(row[i] / sum(row)) + math.log(col[i] / sum(col))
    reference = -total / n

    value = contrastive_loss(batch, heads).value
    assert value == pytest.approx(reference, abs=1e-10)
    # hard bound for cosine logits: each direction's term is at most
    # log(1 + (N-1) e^2) because similarities live in [-1, 1]
    assert 0.0 <= value <= 2.0 * math.log(1.0 + (n - 1) * math.exp(2.0))


def test_random_unit_batch_hovers_near_uniform_loss():
    # at full dimensionality random similarities are all near zero, so the
    # loss sits close to the uniform value 2 ln N
    rng = np.random.default_rng(21)
    n = 32
    batch = TrainingBatch(rng.standard_normal((n, 768)),
                          rng.standard_normal((n, 512)),
                          tuple(f"o{i}" for i in range(n)))
    value = contrastive_loss(batch, init_heads(3)).value
    assert value == pytest.approx(2.0 * math.log(n), abs=0.2)


def test_loss_rejects_tiny_batches():
    with pytest.raises(TrainingError):
        contrastive_loss(random_batch(0, n=1), small_heads())


def test_loss_reports_nonfinite_pair():
    sims = np.zeros((3, 3))
    sims[1, 2] = np.nan
    with pytest.raises(TrainingError, match=r"\(1, 2\)"):
        loss_from_similarity(sims)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 12))
def test_loss_nonnegative_property(seed, n):
    batch = random_batch(seed, n=n)
    assert contrastive_loss(batch, small_heads(seed % 17)).value >= 0.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 8))
def test_loss_and_gradients_permutation_invariant(seed, n):
    batch = random_batch(seed, n=n)
    heads = small_heads(3)
    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(n)
    permuted = TrainingBatch(batch.image_vectors[perm], batch.text_vectors[perm],
                             tuple(batch.object_ids[i] for i in perm))
    g = loss_gradients(batch, heads)
    gp = loss_gradients(permuted, heads)
    assert gp.loss == pytest.approx(g.loss, abs=1e-12)
    assert np.allclose(g.d_w_img, gp.d_w_img, atol=1e-12)
    assert np.allclose(g.d_w_txt, gp.d_w_txt, atol=1e-12)


# --- gradients vs finite differences ------------------------------------------------

def finite_difference_grads(batch, heads, temperature=1.0, h=1e-4):
    def loss_with(w_img, w_txt):
        return contrastive_loss(batch, ProjectionHeads(w_img, w_txt),
                                temperature=temperature).value

    fd_img = np.zeros_like(heads.w_img)
    for i in range(heads.w_img.shape[0]):
        for j in range(heads.w_img.shape[1]):
            plus = heads.w_img.copy()
            plus[i, j] += h
            minus = heads.w_img.copy()
            minus[i, j] -= h
            fd_img[i, j] = (loss_with(plus, heads.w_txt) - loss_with(minus, heads.w_txt)) / (2 * h)
    fd_txt = np.zeros_like(heads.w_txt)
    for i in range(heads.w_txt.shape[0]):
        for j in range(heads.w_txt.shape[1]):
            plus = heads.w_txt.copy()
            plus[i, j] += h
            minus = heads.w_txt.copy()
            minus[i, j] -= h
            fd_txt[i, j] = (loss_with(heads.w_img, plus) - loss_with(heads.w_img, minus)) / (2 * h)
    return fd_img, fd_txt


def max_relative_error(analytic, reference):
    scale = max(np.abs(reference).max(), 1e-12)
    return np.abs(analytic - reference).max() / scale


@pytest.mark.parametrize("seed,n", [(s, n) for s in range(3) for n in (2, 4, 8)])
def test_gradcheck_small_batches(seed, n):
    batch = random_batch(seed, n=n, image_in=6, text_in=5)
    heads = init_heads(seed + 100, image_in=6, text_in=5, shared=4)
    g = loss_gradients(batch, heads)
    fd_img, fd_txt = finite_difference_grads(batch, heads)
    assert max_relative_error(g.d_w_img, fd_img) < 1e-4
    assert max_relative_error(g.d_w_txt, fd_txt) < 1e-4


def test_gradcheck_with_temperature():
    batch = random_batch(9, n=4, image_in=6, text_in=5)
    heads = init_heads(42, image_in=6, text_in=5, shared=4)
    g = loss_gradients(batch, heads, temperature=0.1)
    fd_img, fd_txt = finite_difference_grads(batch, heads, temperature=0.1)
    assert max_relative_error(g.d_w_img, fd_img) < 1e-4
    assert max_relative_error(g.d_w_txt, fd_txt) < 1e-4


def test_symmetric_stationary_batch_has_zero_gradient():
    # all images equal and all texts equal: the two softmax directions cancel
    v = np.tile(np.arange(1.0, 7.0), (4, 1))
    u = np.tile(np.arange(2.0, 7.0), (4, 1))
    batch = TrainingBatch(v, u, tuple("abcd"))
    heads = small_heads(1, image_in=6, text_in=5, shared=4)
    g = loss_gradients(batch, heads)
    assert np.abs(g.d_w_img).max() < 1e-12
    assert np.abs(g.d_w_txt).max() < 1e-12
    fd_img, fd_txt = finite_difference_grads(batch, heads)
    assert np.abs(fd_img).max() < 1e-6
    assert np.abs(fd_txt).max() < 1e-6


def test_batch_duplication_identity():
    """Duplicating every pair adds exactly 2 ln 2 to the loss (each row's
    denominator doubles) and leaves both parameter gradients unchanged."""
    batch = random_batch(11, n=4, image_in=6, text_in=5)
    doubled = TrainingBatch(
        np.vstack([batch.image_vectors, batch.image_vectors]),
        np.vstack([batch.text_vectors, batch.text_vectors]),
        batch.object_ids + batch.object_ids,
    )
    heads = init_heads(2, image_in=6, text_in=5, shared=4)
    g1 = loss_gradients(batch, heads)
    g2 = loss_gradients(doubled, heads)
    assert g2.loss - g1.loss == pytest.approx(2.0 * math.log(2.0), abs=1e-12)
    assert np.allclose(g1.d_w_img, g2.d_w_img, atol=1e-12)
    assert np.allclose(g1.d_w_txt, g2.d_w_txt, atol=1e-12)


def test_small_step_does_not_increase_loss():
    lr = 1e-6
    for seed in range(5):
        batch = random_batch(seed, n=6)
        heads = small_heads(seed)
        g = loss_gradients(batch, heads)
        stepped = ProjectionHeads(heads.w_img - lr * g.d_w_img,
                                  heads.w_txt - lr * g.d_w_txt)
        assert contrastive_loss(batch, stepped).value <= g.loss + 1e-12


# --- schedule -----------------------------------------------------------------------

def test_lr_schedule_seams():
    config = TrainConfig(seed=0)  # warmup 50, peak 2e-5
    assert lr_at_step(0, config, 200) == 0.0
    assert lr_at_step(50, config, 200) == pytest.approx(config.peak_lr)
    assert lr_at_step(200, config, 200) == pytest.approx(0.0, abs=1e-20)
    assert lr_at_step(25, config, 200) == pytest.approx(config.peak_lr / 2)


def test_lr_cosine_midpoint():
    config = TrainConfig(seed=0)
    mid = lr_at_step(125, config, 200)  # halfway through decay
    assert mid == pytest.approx(config.peak_lr / 2)


def test_lr_monotone_decay_after_warmup():
    config = TrainConfig(seed=0)
    values = [lr_at_step(s, config, 300) for s in range(50, 301)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_lr_pure_warmup_when_run_is_short():
    # runs shorter than the warmup window stay on the linear ramp
    config = TrainConfig(seed=0, warmup_steps=50)
    assert lr_at_step(35, config, 35) == pytest.approx(config.peak_lr * 35 / 50)


def test_lr_invalid_step_rejected():
    config = TrainConfig(seed=0)
    with pytest.raises(TrainingError):
        lr_at_step(-1, config, 100)
    with pytest.raises(TrainingError):
        lr_at_step(101, config, 100)


def test_train_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(batch_size=1)
    with pytest.raises(TrainingError):
        TrainConfig(epochs=0)
    with pytest.raises(TrainingError):
        TrainConfig(peak_lr=0.0)
    with pytest.raises(TrainingError):
        TrainConfig(temperature=0.0)
