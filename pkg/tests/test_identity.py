import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import max_rel_error, numeric_grad
from tiltrank.benchmark import make_benchmark
from tiltrank.identity import (
    IdentityConfig,
    LabeledSample,
    MemoryBank,
    check_disjoint,
    class_probability,
    identity_loss,
    identity_loss_op,
    init_bank,
    init_identity_model,
    train_identity,
    update_center,
)
from tiltrank.tensor import Tape, Var


def unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_two_opposite_centers():
    b0 = unit(np.array([1.0, 2.0, -0.5]))
    bank = MemoryBank(np.stack([b0, -b0]), tau=0.1)
    p = class_probability(bank, b0)
    assert p[0] == pytest.approx(np.exp(10) / (np.exp(10) + np.exp(-10)), rel=1e-15)
    assert p[1] == pytest.approx(np.exp(-20) / (1 + np.exp(-20)), rel=1e-12)


def test_identical_centers_are_uniform():
    c = unit(np.ones(4))
    bank = MemoryBank(np.tile(c, (5, 1)))
    f = unit(np.random.default_rng(0).standard_normal(4))
    np.testing.assert_allclose(class_probability(bank, f), 0.2, rtol=0, atol=1e-15)
    assert identity_loss(bank, f, 3) == pytest.approx(np.log(5), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), nc=st.integers(2, 12), tau=st.floats(1e-3, 2.0))
def test_probabilities_sum_to_one_even_with_sharp_temperature(seed, nc, tau):
    bank = init_bank(nc, 6, seed=seed, tau=tau)
    f = unit(np.random.default_rng(seed + 1).standard_normal(6))
    p = class_probability(bank, f)
    assert np.all(np.isfinite(p))
    assert abs(p.sum() - 1) <= 1e-12
    z = bank.centers @ f / tau
    e = np.exp(z - z.max())
    np.testing.assert_allclose(p, e / e.sum(), rtol=1e-12, atol=1e-300)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
def test_argmax_ignores_embedding_scale(seed, scale):
    rng = np.random.default_rng(seed)
    bank = init_bank(6, 5, seed=seed)
    raw = rng.standard_normal(5)
    assert np.argmax(class_probability(bank, unit(raw))) == np.argmax(class_probability(bank, unit(scale * raw)))


def test_loss_matches_closed_form():
    rng = np.random.default_rng(1)
    bank = init_bank(4, 8, seed=3)
    f = unit(rng.standard_normal((3, 8)))
    labels = np.array([2, 0, 3])
    expected = 0.0
    for fi, lab in zip(f, labels):
        z = [np.dot(c, fi) / 0.1 for c in bank.centers]
        expected += -(z[lab] - np.log(sum(np.exp(zj) for zj in z)))
    assert identity_loss(bank, f, labels) == pytest.approx(expected / 3, abs=1e-12)
    assert identity_loss(MemoryBank(np.stack([f[0], -f[0]])), f[0], 0) < 1e-8


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        class_probability(init_bank(3, 4), np.ones(5))
    with pytest.raises(ValueError):
        MemoryBank(np.ones((1, 4)))


def test_update_center_closed_forms():
    bank = MemoryBank(np.eye(3)[:2], momentum=0.5)
    f = np.array([0.0, 0.0, 1.0])
    new = update_center(bank, 0, f)
    np.testing.assert_allclose(new.centers[0], np.array([1.0, 0.0, 1.0]) / np.sqrt(2), rtol=0, atol=1e-15)
    np.testing.assert_array_equal(new.centers[1], bank.centers[1])
    np.testing.assert_array_equal(bank.centers, np.eye(3)[:2])  # input untouched
    assert update_center(MemoryBank(bank.centers, momentum=1.0), 0, f).centers.tobytes() == bank.centers.tobytes()
    np.testing.assert_array_equal(update_center(MemoryBank(bank.centers, momentum=0.0), 1, f).centers[1], f)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.floats(0, 1), steps=st.integers(1, 30))
def test_centers_stay_unit_norm(seed, m, steps):
    rng = np.random.default_rng(seed)
    bank = init_bank(4, 5, seed=seed, momentum=m)
    for _ in range(steps):
        bank = update_center(bank, int(rng.integers(4)), unit(rng.standard_normal(5)))
    np.testing.assert_allclose(np.linalg.norm(bank.centers, axis=1), 1.0, rtol=0, atol=1e-12)


def test_loss_op_gradient():
    rng = np.random.default_rng(2)
    bank = init_bank(5, 6, seed=1)
    emb = rng.standard_normal((4, 6))
    labels = np.array([0, 4, 2, 2])
    tape = Tape()
    v = Var(emb)
    tape.backward(identity_loss_op(tape, v, bank, labels))
    assert max_rel_error(v.grad, numeric_grad(lambda: identity_loss(bank, emb, labels), emb)) < 1e-4


@pytest.mark.parametrize("seed", range(2))
def test_full_model_gradient(seed):
    rng = np.random.default_rng(seed)
    model = init_identity_model(1, channels=(4, 6, 8), embed_dim=4, seed=seed)
    bank = init_bank(3, 4, seed=seed + 5)
    images = rng.uniform(size=(2, 1, 8, 8))
    labels = np.array([0, 2])
    params = model.params()

    def objective():
        tape = Tape()
        pv = {k: Var(v) for k, v in params.items()}
        return float(identity_loss_op(tape, model.forward_op(tape, images, pv), bank, labels).value)

    tape = Tape()
    pv = {k: Var(v) for k, v in params.items()}
    emb = model.forward_op(tape, images, pv)
    np.testing.assert_allclose(emb.value, model.embed(images), rtol=0, atol=1e-14)
    tape.backward(identity_loss_op(tape, emb, bank, labels))
    for k in params:
        assert max_rel_error(pv[k].grad, numeric_grad(objective, params[k])) < 1e-4, k


def _toy_samples(n_classes=3, per=4, domains=("gallery", "query")):
    rng = np.random.default_rng(0)
    return [
        LabeledSample(rng.uniform(size=(1, 8, 8)), c, domains[i % len(domains)])
        for c in range(n_classes)
        for i in range(per)
    ]


def test_zero_epochs_returns_initial_state():
    cfg = IdentityConfig(epochs=0, backbone_channels=(4, 6, 8), embed_dim=4, seed=11)
    result = train_identity(_toy_samples(), cfg)
    init = init_identity_model(1, (4, 6, 8), 4, 11)
    for k, v in init.params().items():
        np.testing.assert_array_equal(result.model.params()[k], v)
    np.testing.assert_array_equal(result.bank.centers, init_bank(3, 4, 13).centers)
    assert result.losses == []


def test_training_preconditions():
    with pytest.raises(ValueError):
        train_identity(_toy_samples(n_classes=1), IdentityConfig(epochs=1))
    with pytest.raises(ValueError):
        train_identity(_toy_samples(domains=("gallery",)), IdentityConfig(epochs=1))


def test_labels_map_to_bank_rows_in_sorted_order():
    samples = [LabeledSample(s.image, {0: 40, 1: 7, 2: 19}[s.label], s.domain) for s in _toy_samples()]
    result = train_identity(samples, IdentityConfig(epochs=1, backbone_channels=(4, 6, 8), embed_dim=4))
    assert result.class_labels == [7, 19, 40]
    assert result.bank.num_classes == 3


def test_disjointness_contract():
    check_disjoint([0, 1], [2, 3])
    with pytest.raises(ValueError):
        check_disjoint([0, 1, 2], [2, 3])


def test_training_is_deterministic_and_separates_classes():
    bench = make_benchmark()
    cfg = IdentityConfig(epochs=10)
    a = train_identity(bench.train, cfg)
    b = train_identity(bench.train, cfg)
    for k, v in a.model.params().items():
        assert v.tobytes() == b.model.params()[k].tobytes()
    assert a.losses == b.losses
    assert a.losses[-1] < a.losses[0]
    emb = a.model.embed(np.stack([s.image for s in bench.train]))
    labels = np.array([s.label for s in bench.train])
    sim = emb @ emb.T
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    assert sim[same & off].mean() - sim[~same].mean() >= 0.2
