import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from petridecay.errors import TrainingError, ValidationError
from petridecay.neural import (Dense, MlpModel, TrainConfig, _Ctx, act, batchnorm, best_epoch, build_dream_nap,
                               build_dream_napr, dense, forward, gradient_check, load_checkpoint,
                               nap_hidden_widths, predict_proba, save_checkpoint, train)


def random_model(rng, n_in, widths, n_classes, bn=False, activation="sigmoid"):
    specs = []
    for w in widths:
        specs.append(dense(w, "glorot"))
        if bn:
            specs.append(batchnorm())
        specs.append(act(activation))
    specs += [dense(n_classes, "glorot"), act("softmax")]
    m = MlpModel(n_in, specs, seed=int(rng.integers(1 << 30)))
    # non-zero biases keep relu units away from their kink
    for layer in m.layers:
        if "b" in layer.params:
            layer.params["b"] = rng.normal(0, 0.5, layer.params["b"].shape)
    return m


@pytest.mark.parametrize("n,expected", [(30, [36, 18, 9]), (10, [12, 6, 3]), (3, [4, 2, 1]), (1, [1, 1, 1])])
def test_nap_widths(n, expected):
    assert nap_hidden_widths(n) == expected


def test_nap_layout_and_parameter_count():
    m = build_dream_nap(30, 9)
    assert m.dense_widths() == [36, 18, 9, 9]
    assert m.n_parameters == 30 * 36 + 36 + 36 * 18 + 18 + 18 * 9 + 9 + 9 * 9 + 9 == 2043
    assert m.count("dropout") == 4
    assert all(s.rate == 0.2 for s in m.specs if s.kind == "dropout")


@pytest.mark.parametrize("activation", ["relu", "sigmoid"])
def test_napr_layout(activation):
    m = build_dream_napr(17, 5, activation)
    assert m.dense_widths() == [300, 200, 100, 50, 5]
    acts = [s.activation for s in m.specs if s.kind == "activation"]
    assert acts == [activation] * 4 + ["softmax"]
    # every hidden batchnorm is followed directly by the activation
    for i, s in enumerate(m.specs[2:-2], start=2):
        if s.kind == "batchnorm":
            assert m.specs[i + 1].activation == activation


def test_bad_architectures():
    with pytest.raises(ValidationError):
        build_dream_napr(4, 3, "tanh")
    with pytest.raises(ValidationError):
        MlpModel(3, [dense(2), act("softmax"), dense(2)])
    with pytest.raises(ValidationError):
        MlpModel(3, [dense(1), act("softmax")])


def test_dense_arithmetic():
    layer = Dense(1, 1, np.random.default_rng(0), "he")
    layer.params["W"][:] = 2.0
    layer.params["b"][:] = 1.0
    assert layer.forward(np.array([[3.0]]), _Ctx(False, None)).item() == 7.0


def test_zero_output_layer_gives_uniform_probabilities():
    m = build_dream_nap(6, 4)
    out = m.layers[-2]
    out.params["W"][:] = 0.0
    out.params["b"][:] = 0.0
    p = forward(m, np.random.default_rng(1).normal(size=(5, 6)))
    assert np.allclose(p, 0.25)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 20))
def test_probability_rows(seed, n_rows):
    rng = np.random.default_rng(seed)
    m = build_dream_nap(7, 3, seed=seed)
    x = rng.normal(0, 5, size=(n_rows, 7))
    p = forward(m, x)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-6) and (p >= 0).all() and (p <= 1).all()
    assert np.array_equal(p, forward(m, x))  # inference is dropout-free


def test_width_mismatch_rejected():
    with pytest.raises(ValidationError, match="width"):
        forward(build_dream_nap(4, 2), np.zeros((2, 5)))


def separable_set(n=100, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x @ np.array([1.0, -2.0]) + 0.3 > 0).astype(int)
    margin = np.abs(x @ np.array([1.0, -2.0]) + 0.3)
    keep = margin > 0.5
    return x[keep], y[keep]


def test_separable_set_is_separable_in_closed_form():
    # least-squares linear discriminant separates it: a witness independent of the trainer
    x, y = separable_set()
    a = np.c_[x, np.ones(len(x))]
    w, *_ = np.linalg.lstsq(a, 2.0 * y - 1, rcond=None)
    assert ((a @ w > 0) == (y == 1)).all()


def test_training_fits_separable_set():
    x, y = separable_set()
    m = MlpModel(2, [dense(8), act("relu"), dense(2, "glorot"), act("softmax")], seed=3)
    m, hist = train(m, x, y, cfg=TrainConfig(batch_size=16, max_epochs=50, lr=0.01))
    assert len(hist) == 50
    assert (predict_proba(m, x).argmax(axis=1) == y).mean() == 1.0


def test_best_epoch_argmin():
    assert best_epoch([0.9, 0.5, 0.6, 0.7]) == 2
    assert best_epoch([0.4, 0.4]) == 1


def test_training_restores_best_validation_snapshot():
    x, y = separable_set(seed=2)
    m = build_dream_nap(2, 2, seed=0)
    m, hist = train(m, x[:60], y[:60], x[60:], y[60:], TrainConfig(max_epochs=12))
    k = best_epoch([h["val_loss"] for h in hist])
    p = predict_proba(m, x[60:])
    assert -np.log(p[np.arange(len(p)), y[60:]]).mean() == pytest.approx(hist[k - 1]["val_loss"])


def test_small_step_descends():
    rng = np.random.default_rng(5)
    m = random_model(rng, 4, [6, 5], 3, activation="relu")
    x, y = rng.normal(size=(16, 4)), rng.integers(0, 3, 16)
    ctx = _Ctx(True, m.rng, dropout=False)
    before, _ = m.loss_and_grad(x, y, ctx)
    m.optimizer.lr = 1e-5
    m.optimizer.step(m.parameters())
    after, _ = m.loss_and_grad(x, y, ctx)
    assert after <= before


def test_training_is_reproducible():
    x, y = separable_set(seed=4)
    runs = []
    for _ in range(2):
        m, hist = train(build_dream_nap(2, 2, seed=11), x, y, cfg=TrainConfig(max_epochs=5))
        runs.append((hist, m.state()))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_empty_training_set():
    with pytest.raises(TrainingError):
        train(build_dream_nap(3, 2), np.zeros((0, 3)), np.zeros(0))


def test_one_hot_labels_accepted():
    x, y = separable_set(seed=6)
    h1 = train(build_dream_nap(2, 2, seed=1), x, y, cfg=TrainConfig(max_epochs=2))[1]
    h2 = train(build_dream_nap(2, 2, seed=1), x, np.eye(2)[y], cfg=TrainConfig(max_epochs=2))[1]
    assert h1 == h2


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_plain(seed):
    rng = np.random.default_rng(seed)
    widths = list(rng.integers(2, 9, size=int(rng.integers(1, 4))))
    m = random_model(rng, int(rng.integers(2, 9)), widths, int(rng.integers(2, 9)),
                     activation=["relu", "sigmoid"][seed % 2])
    x, y = rng.normal(size=(4, m.input_width)), rng.integers(0, m.n_classes, 4)
    assert gradient_check(m, x, y, n_checks=200) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_batchnorm(seed):
    rng = np.random.default_rng(50 + seed)
    widths = list(rng.integers(2, 9, size=int(rng.integers(1, 4))))
    m = random_model(rng, int(rng.integers(2, 9)), widths, int(rng.integers(2, 9)), bn=True)
    x, y = rng.normal(size=(4, m.input_width)), rng.integers(0, m.n_classes, 4)
    assert gradient_check(m, x, y, n_checks=200) < 1e-3


def test_zero_input_bias_gradient_is_mean_residual():
    m = MlpModel(3, [dense(4), act("relu"), dense(3, "glorot"), act("softmax")], seed=0)
    for layer in m.layers:
        for k in layer.params:
            layer.params[k][:] = 0.0
    y = np.array([0, 2, 2, 1, 2])
    _, probs = m.loss_and_grad(np.zeros((5, 3)), y, _Ctx(True, m.rng, dropout=False))
    expected = (np.full((5, 3), 1 / 3) - np.eye(3)[y]).mean(axis=0)
    assert np.allclose(probs, 1 / 3)
    assert np.allclose(m.layers[2].grads["b"], expected)


def test_checkpoint_round_trip(tmp_path):
    m = build_dream_napr(5, 3, seed=2)
    x = np.random.default_rng(0).normal(size=(40, 5))
    train(m, x, np.arange(40) % 3, cfg=TrainConfig(batch_size=10, max_epochs=2))
    save_checkpoint(m, tmp_path / "m.json", ["a", "b", "c"], {"note": 1})
    back, alphabet, extra = load_checkpoint(tmp_path / "m.json")
    assert alphabet == ["a", "b", "c"] and extra == {"note": 1}
    assert np.array_equal(predict_proba(back, x), predict_proba(m, x))


def test_checkpoint_rejects_foreign_json(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValidationError):
        load_checkpoint(tmp_path / "x.json")
