import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stargraph import tensor as T
from stargraph.errors import StarGraphError
from stargraph.objective import (
    ScoreConfig,
    TripleBatch,
    adversarial_weights,
    batch_objective,
    score,
    score_prime,
    score_v2,
    self_adversarial_loss,
    transe_score,
)
from stargraph.tensor import Parameter

mpmath.mp.dps = 40


def scalar_v2(h, t, rh, rt, r, u, norm="l1"):
    inner = [h[i] * (rh[i] + u) - t[i] * (rt[i] + u) + r[i] for i in range(len(h))]
    return -(sum(abs(x) for x in inner) if norm == "l1" else sum(x * x for x in inner) ** 0.5)


def scalar_prime(h, t, rh, rt, r, u, norm="l1"):
    inner = [h[i] - t[i] + r[i] + u * (h[i] * rh[i] - t[i] * rt[i]) for i in range(len(h))]
    return -(sum(abs(x) for x in inner) if norm == "l1" else sum(x * x for x in inner) ** 0.5)


def mp_loss(pos, negs, gamma, alpha):
    sig = lambda x: 1 / (1 + mpmath.exp(-x))
    z = [mpmath.exp(alpha * mpmath.mpf(f)) for f in negs]
    w = [x / sum(z) for x in z]
    out = -mpmath.log(sig(gamma + mpmath.mpf(pos)))
    return float(out - sum(wi * mpmath.log(sig(-mpmath.mpf(f) - gamma)) for wi, f in zip(w, negs)))


H, TT, RH, RT, R = [1, 2], [0, 1], [1, 1], [2, 0], [1, 0]


def test_v2_example():
    assert score_v2(H, TT, RH, RT, R, u=1.0).item() == pytest.approx(-6.0)
    assert scalar_v2(H, TT, RH, RT, R, 1.0) == pytest.approx(-6.0)


def test_prime_example():
    assert score_prime(H, TT, RH, RT, R, u=0.1).item() == pytest.approx(-3.3)
    assert scalar_prime(H, TT, RH, RT, R, 0.1) == pytest.approx(-3.3)


def test_v2_zero_when_sides_cancel():
    h = np.array([0.3, -1.0, 2.0])
    rh = np.array([0.5, 0.1, -0.2])
    assert score_v2(h, h, rh, rh, np.zeros(3), u=0.7).item() == 0.0


def test_width_mismatch():
    with pytest.raises(StarGraphError):
        score_v2([1, 2], [1, 2, 3], [1, 1], [1, 1], [0, 0], 0.1)


@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_scores_match_scalar_oracle(norm):
    rng = np.random.default_rng(0)
    for _ in range(50):
        h, t, rh, rt, r = rng.normal(size=(5, 6))
        u = float(rng.uniform(-1, 1))
        assert score_v2(h, t, rh, rt, r, u, norm).item() == pytest.approx(scalar_v2(h, t, rh, rt, r, u, norm))
        assert score_prime(h, t, rh, rt, r, u, norm).item() == pytest.approx(scalar_prime(h, t, rh, rt, r, u, norm))


@pytest.mark.parametrize("variant", ["triplere_prime", "triplere_v2"])
@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_batched_score_matches_direct_form(variant, norm):
    rng = np.random.default_rng(1)
    h = rng.normal(size=(4, 1, 8))
    t = rng.normal(size=(4, 7, 8))
    rel = rng.normal(size=(4, 1, 24))
    cfg = ScoreConfig(variant, 0.3, norm)
    got = score(cfg, h, t, rel).data
    direct = score_prime if variant == "triplere_prime" else score_v2
    want = direct(h, t, rel[..., :8], rel[..., 8:16], rel[..., 16:], 0.3, norm).data
    assert np.allclose(got, want, atol=1e-12)
    # head-side broadcast takes the other branch
    got_head = score(cfg, t, h, rel).data
    want_head = direct(t, h, rel[..., :8], rel[..., 8:16], rel[..., 16:], 0.3, norm).data
    assert np.allclose(got_head, want_head, atol=1e-12)


vec = arrays(np.float64, 6, elements=st.floats(-10, 10))


@settings(max_examples=200, deadline=None)
@given(vec, vec, vec, vec, vec)
def test_identities_and_sign(h, t, rh, rt, r):
    assert abs(score_prime(h, t, rh, rt, r, 1.0).item() - score_v2(h, t, rh, rt, r, 1.0).item()) <= 1e-6 * (
        1 + abs(score_v2(h, t, rh, rt, r, 1.0).item())
    )
    assert abs(score_prime(h, t, rh, rt, r, 0.0).item() - transe_score(h, t, r).item()) <= 1e-7
    for u in (0.0, 0.1, 1.0):
        assert score_prime(h, t, rh, rt, r, u).item() <= 0
        assert score_v2(h, t, rh, rt, r, u, "l2").item() <= 0


# --- loss ---------------------------------------------------------------------


def test_loss_worked_example():
    got = self_adversarial_loss(-3.0, [-5.0, -7.0], gamma=6.0, alpha=1.0).item()
    assert got == pytest.approx(mp_loss(-3.0, [-5.0, -7.0], 6.0, 1.0), rel=1e-12)
    assert got == pytest.approx(1.2427, abs=1e-4)
    assert np.allclose(adversarial_weights([-5.0, -7.0]), [0.8808, 0.1192], atol=1e-4)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-30, 0),
    st.lists(st.floats(-30, 0), min_size=1, max_size=8),
    st.floats(0.5, 12),
    st.floats(0, 3),
)
def test_loss_matches_high_precision_oracle(pos, negs, gamma, alpha):
    got = self_adversarial_loss(pos, negs, gamma, alpha).item()
    assert got == pytest.approx(mp_loss(pos, negs, gamma, alpha), rel=1e-9, abs=1e-12)


def test_weight_edge_cases():
    assert adversarial_weights([-3.0]).tolist() == [1.0]
    assert np.allclose(adversarial_weights([-2.0] * 5), 0.2)
    w = adversarial_weights(np.random.default_rng(0).normal(size=(10, 7)) * 50)
    assert np.all(w >= 0) and np.allclose(w.sum(-1), 1, atol=1e-6)


def test_loss_rejects_bad_input():
    with pytest.raises(StarGraphError):
        self_adversarial_loss(-1.0, np.zeros(0), 6.0)
    with pytest.raises(StarGraphError):
        self_adversarial_loss(-1.0, [-2.0], 0.0)


def test_loss_weights_are_constants():
    pos = Parameter(np.array(-3.0), "pos")
    negs = Parameter(np.array([-5.0, -7.0]), "negs")
    self_adversarial_loss(pos, negs, 6.0).backward()
    w = adversarial_weights([-5.0, -7.0])
    sig = lambda x: 1 / (1 + np.exp(-x))
    # d/df_i of -w_i log sig(-f_i - gamma) with w fixed
    assert np.allclose(negs.grad, w * sig(np.array([-5.0, -7.0]) + 6.0))


@settings(max_examples=100, deadline=None)
@given(st.floats(-20, -0.01), st.floats(0.001, 5), st.lists(st.floats(-20, 0), min_size=1, max_size=5))
def test_loss_decreases_with_positive_score(pos, delta, negs):
    assert self_adversarial_loss(pos + min(delta, -pos), negs, 6.0).item() <= self_adversarial_loss(pos, negs, 6.0).item()


# --- batch objective ---------------------------------------------------------


def toy_batch(rng, b=5, n=3, e=8):
    pos = np.stack([rng.integers(0, e, b), rng.integers(0, 2, b), rng.integers(0, e, b)], 1)
    return TripleBatch(pos, rng.integers(0, e, (b, n)), rng.random(b) < 0.5)


def test_batch_of_one_is_the_plain_loss():
    rng = np.random.default_rng(0)
    reps = rng.normal(size=(8, 4))
    rels = rng.normal(size=(2, 12))
    cfg = ScoreConfig(u=0.1)
    for corrupt in (False, True):
        batch = TripleBatch(np.array([[1, 1, 5]]), np.array([[0, 2, 7]]), np.array([corrupt]))
        got = batch_objective(T.Tensor(reps), np.arange(8), T.Tensor(rels), batch, cfg).item()
        r = rels[1]
        cands = [5, 0, 2, 7] if not corrupt else [1, 0, 2, 7]
        s = [
            score_prime(reps[1] if not corrupt else reps[c], reps[c] if not corrupt else reps[5], r[:4], r[4:8], r[8:], 0.1).item()
            for c in cands
        ]
        assert got == pytest.approx(self_adversarial_loss(s[0], s[1:], 6.0).item(), rel=1e-10)


def test_batch_duplication_invariance():
    rng = np.random.default_rng(2)
    reps, rels = T.Tensor(rng.normal(size=(8, 4))), T.Tensor(rng.normal(size=(2, 12)))
    b = toy_batch(rng)
    doubled = TripleBatch(
        np.concatenate([b.positives] * 2), np.concatenate([b.negatives] * 2), np.concatenate([b.corrupt_head] * 2)
    )
    cfg = ScoreConfig()
    assert batch_objective(reps, np.arange(8), rels, doubled, cfg).item() == pytest.approx(
        batch_objective(reps, np.arange(8), rels, b, cfg).item(), rel=1e-12
    )


def test_batch_shape_errors():
    rng = np.random.default_rng(3)
    reps, rels = T.Tensor(rng.normal(size=(8, 4))), T.Tensor(rng.normal(size=(2, 12)))
    b = toy_batch(rng)
    with pytest.raises(StarGraphError):
        batch_objective(reps, np.arange(8), T.Tensor(rng.normal(size=(2, 9))), b, ScoreConfig())
    with pytest.raises(StarGraphError):
        batch_objective(reps, np.arange(7), rels, b, ScoreConfig())
    bad = TripleBatch(b.positives, b.negatives[:2], b.corrupt_head)
    with pytest.raises(StarGraphError):
        batch_objective(reps, np.arange(8), rels, bad, ScoreConfig())


def test_score_config_validation():
    with pytest.raises(StarGraphError):
        ScoreConfig(score="rotate")
    with pytest.raises(StarGraphError):
        ScoreConfig(norm="l3")
    with pytest.raises(StarGraphError):
        ScoreConfig(u=float("nan"))
