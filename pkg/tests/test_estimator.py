import numpy as np
import pytest

from mtevalkit.corpus import TranslationTriple
from mtevalkit.embeddings import DeterministicTestProvider
from mtevalkit.errors import CheckpointError, ValidationError
from mtevalkit.estimator import (
    EstimatorModel,
    TrainConfig,
    _loss_and_grads,
    batch_mse,
    combine,
    dataset_mse,
    forward,
    grad_check,
    gradient_step,
    load_model,
    pool,
    prepare_features,
    save_model,
    train,
)

from conftest import LP, make_triple

DIM = 6
PROVIDER = DeterministicTestProvider(dim=DIM, identity="test-enc")


def small_model(mode="stl_ref", seed=0, hidden=(8, 6), **kw):
    return EstimatorModel(mode=mode, dim=DIM, hidden=hidden, seed=seed, **kw)


def toy_examples(n, seed=0, with_ref=True):
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        words = lambda: " ".join(f"w{rng.integers(0, 50)}" for _ in range(rng.integers(2, 6)))
        triple = TranslationTriple(
            segment_id=f"t{i:04d}",
            lp=LP,
            src=words(),
            mt=words(),
            ref=words() if with_ref else None,
        )
        examples.append((triple, float(rng.uniform(0, 1))))
    return examples


# -- pooling --------------------------------------------------------------------


def test_pool_identical_rows():
    v = np.array([0.25, -1.5, 3.0])
    assert np.array_equal(pool(np.stack([v, v, v])), v)


def test_pool_two_basis_rows():
    assert np.allclose(pool([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])


def test_pool_single_row():
    assert np.array_equal(pool([[2.0, 4.0]]), [2.0, 4.0])


def test_pool_empty_errors():
    with pytest.raises(ValidationError):
        pool(np.zeros((0, 4)))


# -- feature combination -----------------------------------------------------------


def test_combine_zeros_ref_based():
    z = np.zeros(2)
    fv = combine(z, z, z)
    assert fv.layout == "src_mt_ref"
    assert fv.values.shape == (14,)
    assert np.all(fv.values == 0.0)


def test_combine_qe_identical_inputs_zero_diff_block():
    h = np.array([0.5, -0.25, 1.0])
    fv = combine(h, h)
    assert fv.layout == "src_mt"
    assert fv.values.shape == (12,)
    assert np.all(fv.values[9:12] == 0.0)  # |h_mt - h_src| block


def test_combine_matches_hand_assembly_dim3():
    rng = np.random.default_rng(5)
    h_src, h_mt, h_ref = rng.normal(size=(3, 3))
    fv = combine(h_src, h_mt, h_ref)
    expected = np.concatenate(
        [h_mt, h_src, h_ref, h_mt * h_src, h_mt * h_ref, np.abs(h_mt - h_src), np.abs(h_mt - h_ref)]
    )
    assert fv.values.shape == (21,)
    assert np.array_equal(fv.values, expected)


def test_combine_dim_mismatch():
    with pytest.raises(ValidationError):
        combine(np.zeros(3), np.zeros(4))


def test_combine_is_order_sensitive():
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=(2, 4))
    assert not np.array_equal(combine(a, b).values, combine(b, a).values)


# -- forward --------------------------------------------------------------------


def zero_with_bias(model, bias):
    for w, b in model.trunk:
        w[...] = 0.0
        b[...] = 0.0
    for w, b in model.adapters.values():
        w[...] = 0.0
        b[...] = 0.0
    model.trunk[-1][1][...] = bias
    return model


def test_zero_weights_constant_output():
    model = zero_with_bias(small_model(), 0.37)
    triple = make_triple("x")
    result = model.score_triple(PROVIDER, triple)
    assert result.final == pytest.approx(0.37, abs=1e-7)


def test_mtl_final_is_uniform_average(monkeypatch):
    model = small_model(mode="mtl")
    fixed = {"src_mt": 0.2, "mt_ref": 0.4, "src_mt_ref": 0.6}
    monkeypatch.setattr(model, "_head_forward", lambda layout, x: fixed[layout])
    result = model.score(PROVIDER, "a b", "c d", "e f")
    assert result.final == pytest.approx(0.4, abs=1e-12)
    assert result.heads == fixed


def test_mtl_final_equals_mean_of_heads_real_model():
    model = small_model(mode="mtl", seed=3)
    result = model.score_triple(PROVIDER, make_triple("x"))
    assert result.final == pytest.approx(np.mean(list(result.heads.values())), abs=1e-12)


def test_stl_qe_ignores_reference_bits():
    model = small_model(mode="stl_qe", seed=1)
    a = model.score(PROVIDER, "src text", "mt text", "ref one")
    b = model.score(PROVIDER, "src text", "mt text", "completely different ref")
    c = model.score(PROVIDER, "src text", "mt text", None)
    assert a.final == b.final == c.final


def test_mtl_qe_pathway_ignores_reference():
    model = small_model(mode="mtl", seed=2)
    a = model.score(PROVIDER, "s", "m", "ref a", qe=True)
    b = model.score(PROVIDER, "s", "m", "ref b", qe=True)
    assert a.final == b.final
    assert list(a.heads) == ["src_mt"]


def test_missing_ref_errors():
    with pytest.raises(ValidationError):
        small_model(mode="stl_ref").score(PROVIDER, "s", "m", None)
    with pytest.raises(ValidationError):
        small_model(mode="mtl").score(PROVIDER, "s", "m", None)


def test_stl_ref_cannot_serve_qe():
    with pytest.raises(ValidationError):
        small_model(mode="stl_ref").score(PROVIDER, "s", "m", "r", qe=True)


def test_provider_dim_mismatch_detected():
    other = DeterministicTestProvider(dim=DIM + 1)
    with pytest.raises(ValidationError):
        small_model().score(other, "s", "m", "r")


def test_forward_functional_wrapper():
    model = small_model(seed=4)
    direct = model.score(PROVIDER, "a", "b", "c")
    wrapped = forward(model, PROVIDER, "a", "b", "c")
    assert direct.final == wrapped.final


def test_descaled_score_uses_stored_pair():
    model = small_model(seed=5, scale=(-2.0, 3.0))
    result = model.score_triple(PROVIDER, make_triple("x"))
    assert result.descaled == pytest.approx(result.final * 5.0 - 2.0, abs=1e-12)


# -- training --------------------------------------------------------------------


def test_zero_epochs_leaves_parameters_identical():
    model = small_model(seed=7)
    before = model.copy_params()
    examples = toy_examples(10)
    config = TrainConfig(batch_size=4, grad_accumulation=1, epochs=0)
    model, history = train(model, PROVIDER, examples, config)
    assert history == []
    for a, b in zip(before, model._param_arrays()):
        assert np.array_equal(a, b)


def test_history_has_one_row_per_epoch():
    model = small_model(seed=7)
    examples = toy_examples(10)
    config = TrainConfig(batch_size=4, grad_accumulation=1, epochs=3)
    _, history = train(model, PROVIDER, examples, config, val_set=examples[:5])
    assert [h.epoch for h in history] == [0, 1, 2]
    assert all(np.isfinite(h.train_mse) for h in history)


def test_dim_mismatch_errors_before_update():
    model = small_model(seed=7)
    before = model.copy_params()
    other = DeterministicTestProvider(dim=DIM + 2)
    with pytest.raises(ValidationError):
        train(model, other, toy_examples(6), TrainConfig(epochs=1))
    for a, b in zip(before, model._param_arrays()):
        assert np.array_equal(a, b)


def test_empty_training_set_errors():
    with pytest.raises(ValidationError):
        train(small_model(), PROVIDER, [], TrainConfig(epochs=1))


def test_targets_must_be_scaled():
    examples = toy_examples(4)
    bad = [(examples[0][0], 1.5)] + examples[1:]
    with pytest.raises(ValidationError):
        train(small_model(), PROVIDER, bad, TrainConfig(epochs=1))


def test_training_is_bit_reproducible():
    runs = []
    for _ in range(2):
        model = small_model(seed=11)
        config = TrainConfig(batch_size=4, grad_accumulation=2, learning_rate=0.05, epochs=4, rng_seed=11)
        model, history = train(model, PROVIDER, toy_examples(24, seed=3), config, toy_examples(8, seed=4))
        runs.append((model.copy_params(), [(h.train_mse, h.val_spearman) for h in history]))
    for a, b in zip(runs[0][0], runs[1][0]):
        assert np.array_equal(a, b)
    assert runs[0][1] == runs[1][1]


def test_gradient_accumulation_matches_combined_batch():
    examples = toy_examples(8, seed=6)
    X, y = prepare_features(small_model(seed=9), PROVIDER, examples)

    model_a = small_model(seed=9)
    # two half batches, mean of gradients
    _, g1 = _loss_and_grads(model_a, {k: v[:4] for k, v in X.items()}, y[:4])
    _, g2 = _loss_and_grads(model_a, {k: v[4:] for k, v in X.items()}, y[4:])
    from mtevalkit.estimator import _grad_arrays

    lr = 0.1
    accumulated = [
        (a + b) / 2.0 for a, b in zip(_grad_arrays(model_a, g1), _grad_arrays(model_a, g2))
    ]
    for param, grad in zip(model_a._param_arrays(), accumulated):
        param -= lr * grad

    model_b = small_model(seed=9)
    gradient_step(model_b, X, y, lr)

    for a, b in zip(model_a._param_arrays(), model_b._param_arrays()):
        assert np.max(np.abs(a - b)) <= 1e-9


def test_descent_property_small_lr():
    for seed in range(3):
        model = small_model(seed=seed, mode="mtl" if seed == 2 else "stl_ref")
        examples = toy_examples(6, seed=seed)
        X, y = prepare_features(model, PROVIDER, examples)
        before = batch_mse(model, X, y)
        gradient_step(model, X, y, 1e-6)
        after = batch_mse(model, X, y)
        assert after <= before + 1e-9


def test_synthetic_regression_converges():
    # target = sigmoid(w . features) for a fixed random w; training must cut
    # the initial MSE by 10x within 50 epochs at seed 0
    rng = np.random.default_rng(0)
    examples_raw = toy_examples(400, seed=0)
    probe = small_model(seed=0)
    X, _ = prepare_features(probe, PROVIDER, [(t, 0.5) for t, _ in examples_raw])
    w = rng.normal(size=X["src_mt_ref"].shape[1]) / np.sqrt(X["src_mt_ref"].shape[1])
    targets = 1.0 / (1.0 + np.exp(-(X["src_mt_ref"] @ w * 4.0)))
    examples = [(t, float(y)) for (t, _), y in zip(examples_raw, targets)]

    model = small_model(seed=0, hidden=(32, 16))
    initial = dataset_mse(model, PROVIDER, examples)
    config = TrainConfig(batch_size=16, grad_accumulation=2, learning_rate=0.5, epochs=50, rng_seed=0)
    model, history = train(model, PROVIDER, examples, config)
    final = history[-1].train_mse
    assert final <= 0.1 * initial


def test_grad_check_random_models():
    worst = 0.0
    for seed in range(3):
        mode = ["stl_ref", "stl_qe", "mtl"][seed]
        model = EstimatorModel(mode=mode, dim=DIM, hidden=(5, 4), seed=seed, trunk_in=8)
        examples = toy_examples(4, seed=seed, with_ref=True)
        worst = max(worst, grad_check(model, PROVIDER, examples, epsilon=1e-5))
    assert worst < 1e-4


def test_grad_check_zero_weight_output_bias():
    model = zero_with_bias(small_model(hidden=(4,)), 0.0)
    examples = toy_examples(3, seed=2)
    X, y = prepare_features(model, PROVIDER, examples)
    _, grads = _loss_and_grads(model, X, y)
    analytic_bias_grad = grads["trunk"][-1][1][0]
    eps = 1e-6
    bias = model.trunk[-1][1]
    bias[0] = eps
    plus = batch_mse(model, X, y)
    bias[0] = -eps
    minus = batch_mse(model, X, y)
    bias[0] = 0.0
    numeric = (plus - minus) / (2 * eps)
    assert analytic_bias_grad == pytest.approx(numeric, abs=1e-6)


def test_grad_check_epsilon_zero_rejected():
    with pytest.raises(ValidationError):
        grad_check(small_model(), PROVIDER, toy_examples(2), epsilon=0.0)


# -- checkpoints --------------------------------------------------------------------


def test_checkpoint_round_trip_bit_identical_scores(tmp_path):
    for mode in ("stl_ref", "stl_qe", "mtl"):
        model = EstimatorModel(mode=mode, dim=DIM, hidden=(8, 5), seed=13, scale=(-1.5, 2.5))
        path = tmp_path / f"{mode}.bin"
        save_model(model, path)
        loaded = load_model(path)
        triple = make_triple("chk")
        a = model.score_triple(PROVIDER, triple)
        b = loaded.score_triple(PROVIDER, triple)
        assert a.final == b.final
        assert a.descaled == b.descaled
        assert a.heads == b.heads


def test_checkpoint_round_trip_after_training(tmp_path):
    model = small_model(seed=21)
    config = TrainConfig(batch_size=4, grad_accumulation=1, learning_rate=0.1, epochs=2)
    model, _ = train(model, PROVIDER, toy_examples(12, seed=1), config)
    path = tmp_path / "trained.bin"
    save_model(model, path)
    loaded = load_model(path)
    triple = make_triple("chk2")
    assert model.score_triple(PROVIDER, triple).final == loaded.score_triple(PROVIDER, triple).final


def test_truncated_checkpoint_fails_checksum(tmp_path):
    model = small_model(seed=1)
    path = tmp_path / "m.bin"
    save_model(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-7])
    with pytest.raises(CheckpointError):
        load_model(path)


def test_checkpoint_dim_mismatch_surfaces_on_scoring(tmp_path):
    model = EstimatorModel(mode="stl_ref", dim=DIM + 2, hidden=(4,), seed=0)
    path = tmp_path / "m.bin"
    save_model(model, path)
    loaded = load_model(path)
    with pytest.raises(ValidationError):
        loaded.score_triple(PROVIDER, make_triple("x"))


def test_checkpoint_is_not_json_garbage(tmp_path):
    path = tmp_path / "m.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_model(path)
