"""Matching network against scalar oracles and finite differences.

The wide convolution is checked against a plain quadruple-loop
reimplementation, pooling against a sorted-list oracle, the batched padded
path against the single-pair path, and every analytic gradient against
central differences.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridlink.matchnet import (
    MatchModel,
    MatchModelConfig,
    TrainingError,
    attention_combine,
    batch_loss,
    batched_backward,
    batched_forward,
    bilinear_sim,
    forward,
    grad_check_model,
    init_model,
    kma_pool,
    load_model,
    pad_side,
    save_model,
    train,
    wide_conv,
)


def conv_oracle(fm, filters, bias):
    """Scalar-loop wide convolution: out[f,p,l] over P = L + h - 1 positions."""
    F, h, C, nl = filters.shape
    L = fm.shape[0]
    out = np.zeros((F, L + h - 1, nl))
    for f in range(F):
        for p in range(L + h - 1):
            for layer in range(nl):
                s = 0.0
                for j in range(h):
                    r = p - h + 1 + j
                    if 0 <= r < L:
                        for c in range(C):
                            s += filters[f, j, c, layer] * fm[r, c, layer]
                out[f, p, layer] = s + bias[f, layer]
    return out


def small_model(F=3, h=2, dim=4, k=2, seed=0, **kw) -> MatchModel:
    cfg = MatchModelConfig(
        filter_count=F, window_height=h, kma_k=k, dim=dim, seed=seed, **kw
    )
    rng = np.random.default_rng(seed + 17)
    model = init_model(cfg)
    model.filters = rng.uniform(-0.5, 0.5, size=model.filters.shape)
    model.conv_bias = rng.uniform(-0.3, 0.3, size=model.conv_bias.shape)
    model.a1 = rng.uniform(0.2, 1.5, size=3)
    model.a2 = rng.uniform(0.2, 1.5, size=3)
    model.U = rng.uniform(-0.5, 0.5, size=model.U.shape)
    model.cls_w = rng.uniform(-0.5, 0.5, size=model.cls_w.shape)
    model.cls_b = rng.uniform(-0.5, 0.5, size=2)
    return model


def rand_fm(rng, L, cols):
    return rng.uniform(-1.0, 1.0, size=(L, cols, 3))


# ---------------------------------------------------------------------------
# forward pieces


def test_wide_conv_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    for L, h in [(1, 1), (1, 3), (4, 2), (5, 3), (6, 5)]:
        model = small_model(F=4, h=h, dim=3, seed=L)
        fm = rand_fm(rng, L, model.config.cols)
        got = wide_conv(fm, model)
        want = conv_oracle(fm, model.filters, model.conv_bias)
        assert got.shape == (4, L + h - 1, 3)
        assert np.allclose(got, want, atol=1e-12)


def test_attention_combine_relu_and_identity():
    rng = np.random.default_rng(0)
    cm = rng.normal(size=(3, 5, 3))
    a = np.array([0.5, -1.0, 2.0])
    pre = cm @ a
    assert np.allclose(attention_combine(cm, a, "identity"), pre)
    assert np.allclose(attention_combine(cm, a, "relu"), np.maximum(pre, 0.0))
    assert (attention_combine(cm, a, "relu") >= 0).all()


def test_kma_pool_pinned_example():
    # the worked pooling example: two largest of [3, 1, 2, 0] average to 2.5
    assert kma_pool(np.array([3.0, 1.0, 2.0, 0.0]), 2) == 2.5


def test_kma_pool_k_larger_than_vector_uses_all():
    assert kma_pool(np.array([4.0, 2.0]), 5) == 3.0
    assert kma_pool(np.array([7.0]), 3) == 7.0


def test_kma_pool_rejects_empty():
    with pytest.raises(ValueError):
        kma_pool(np.array([]), 2)


@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=20),
    st.integers(min_value=1, max_value=25),
)
def test_kma_pool_matches_sorted_oracle(vals, k):
    top = sorted(vals, reverse=True)[: min(k, len(vals))]
    assert math.isclose(kma_pool(np.array(vals), k), sum(top) / len(top), abs_tol=1e-9)


def test_bilinear_sim_is_quadratic_form():
    rng = np.random.default_rng(1)
    x1, x2 = rng.normal(size=4), rng.normal(size=4)
    U = rng.normal(size=(4, 4))
    want = sum(x1[i] * U[i, j] * x2[j] for i in range(4) for j in range(4))
    assert math.isclose(bilinear_sim(x1, U, x2), want, rel_tol=1e-12)


def test_forward_probability_in_unit_interval():
    rng = np.random.default_rng(5)
    model = small_model()
    for _ in range(10):
        p = forward((rand_fm(rng, 3, model.config.cols), rand_fm(rng, 5, model.config.cols)), model)
        assert 0.0 < p < 1.0


def test_fresh_model_scores_half_and_loss_is_ln2():
    """Zero classifier forces p = 0.5 and cross-entropy ln 2 exactly."""
    cfg = MatchModelConfig(filter_count=4, window_height=2, dim=4, seed=9)
    model = init_model(cfg)
    rng = np.random.default_rng(2)
    pairs = [rand_fm(rng, L, cfg.cols) for L in (2, 4, 3, 5)]
    for ent, txt in zip(pairs[:2], pairs[2:]):
        assert forward((ent, txt), model) == 0.5
    ent_x, ent_lens = pad_side(pairs[:2])
    txt_x, txt_lens = pad_side(pairs[2:])
    probs, cache = batched_forward(model, ent_x, ent_lens, txt_x, txt_lens)
    assert np.all(probs == 0.5)
    assert batch_loss(cache.probs, np.array([0, 1])) == pytest.approx(math.log(2), abs=1e-15)


# ---------------------------------------------------------------------------
# batched path vs single-pair path


def test_pad_side_layout_and_lengths():
    rng = np.random.default_rng(4)
    mats = [rand_fm(rng, L, 6) for L in (3, 1, 5)]
    x, lens = pad_side(mats)
    assert x.shape == (3, 5, 6, 3) and lens.tolist() == [3, 1, 5]
    for i, m in enumerate(mats):
        assert np.array_equal(x[i, : lens[i]], m)
        assert np.all(x[i, lens[i] :] == 0.0)


@pytest.mark.parametrize("activation", ["relu", "identity"])
def test_batched_forward_matches_single_pair_path(activation):
    rng = np.random.default_rng(11)
    model = small_model(F=5, h=3, dim=5, k=3, activation=activation)
    cols = model.config.cols
    ents = [rand_fm(rng, L, cols) for L in (1, 4, 2, 6, 3)]
    txts = [rand_fm(rng, L, cols) for L in (5, 1, 3, 2, 7)]
    ent_x, ent_lens = pad_side(ents)
    txt_x, txt_lens = pad_side(txts)
    probs, _ = batched_forward(model, ent_x, ent_lens, txt_x, txt_lens)
    singles = [forward((e, t), model) for e, t in zip(ents, txts)]
    assert np.allclose(probs, singles, atol=1e-12)


def test_batched_forward_ignores_extra_padding_rows():
    rng = np.random.default_rng(12)
    model = small_model(F=4, h=2, dim=4, k=3)
    cols = model.config.cols
    ents = [rand_fm(rng, L, cols) for L in (2, 3)]
    txts = [rand_fm(rng, L, cols) for L in (3, 1)]
    ent_x, ent_lens = pad_side(ents)
    txt_x, txt_lens = pad_side(txts)
    probs, _ = batched_forward(model, ent_x, ent_lens, txt_x, txt_lens)

    def overpad(x, extra):
        B, L, C, nl = x.shape
        out = np.zeros((B, L + extra, C, nl))
        out[:, :L] = x
        return out

    probs2, _ = batched_forward(
        model, overpad(ent_x, 4), ent_lens, overpad(txt_x, 2), txt_lens
    )
    assert np.array_equal(probs, probs2)


# ---------------------------------------------------------------------------
# gradients


@pytest.mark.parametrize("seed", [0, 1])
def test_analytic_gradients_match_central_differences(seed):
    cfg = MatchModelConfig(filter_count=3, window_height=2, kma_k=2, dim=4, seed=seed)
    errs = grad_check_model(cfg, L_ent=3, L_txt=4, seed=seed)
    assert set(errs) == {
        "filters", "conv_bias", "a1", "a2", "U", "classifier_w", "classifier_b"
    }
    for name, err in errs.items():
        assert err < 1e-4, f"{name}: {err}"


def test_gradients_hold_under_identity_activation():
    cfg = MatchModelConfig(
        filter_count=2, window_height=2, kma_k=2, dim=3, activation="identity"
    )
    errs = grad_check_model(cfg, L_ent=2, L_txt=3, seed=5)
    for name, err in errs.items():
        assert err < 1e-4, f"{name}: {err}"


def test_batch_gradients_match_central_differences_with_mixed_lengths():
    """Multi-pair batch with a length short enough to hit the k > len branch."""
    rng = np.random.default_rng(21)
    model = small_model(F=3, h=2, dim=3, k=3, seed=21)
    cols = model.config.cols
    ents = [rand_fm(rng, L, cols) for L in (1, 3, 2, 4)]
    txts = [rand_fm(rng, L, cols) for L in (2, 1, 4, 3)]
    labels = np.array([1, 0, 0, 1])
    ent_x, ent_lens = pad_side(ents)
    txt_x, txt_lens = pad_side(txts)

    def loss_now():
        _, cache = batched_forward(model, ent_x, ent_lens, txt_x, txt_lens)
        return batch_loss(cache.probs, labels)

    _, cache = batched_forward(model, ent_x, ent_lens, txt_x, txt_lens)
    analytic = batched_backward(model, cache, labels)
    step = 1e-5
    for name, arr in model.param_groups().items():
        flat = arr.ravel()
        ga = analytic[name].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_now()
            flat[i] = keep - step
            down = loss_now()
            flat[i] = keep
            gn = (up - down) / (2 * step)
            denom = max(abs(ga[i]), abs(gn), 1e-6)
            assert abs(ga[i] - gn) / denom < 1e-4, (name, i)


# ---------------------------------------------------------------------------
# training


def separable_pairs(n, cols, rng):
    """Label 1: both sides share a matrix; label 0: independent draws."""
    pairs = []
    for i in range(n):
        L1, L2 = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        if i % 2 == 0:
            shared = rng.uniform(-1, 1, size=(L1, cols, 3))
            pairs.append(((shared, np.vstack([shared, shared[:L2 - L1 or None]])[:L2]), 1))
        else:
            pairs.append(
                ((rng.uniform(-1, 1, size=(L1, cols, 3)),
                  rng.uniform(-1, 1, size=(L2, cols, 3))), 0)
            )
    return pairs


def test_training_fits_a_small_separable_set_perfectly():
    rng = np.random.default_rng(7)
    cfg = MatchModelConfig(
        filter_count=8, window_height=2, kma_k=2, dim=6,
        learning_rate=0.05, epochs=120, batch_size=10, seed=7,
    )
    pairs = separable_pairs(20, cfg.cols, rng)
    result = train(init_model(cfg), pairs, cfg)
    assert result.epoch_losses[-1] < result.epoch_losses[0]
    preds = [forward(p, result.model) >= 0.5 for p, _ in pairs]
    assert preds == [bool(lbl) for _, lbl in pairs]


def test_training_is_deterministic():
    rng = np.random.default_rng(8)
    cfg = MatchModelConfig(
        filter_count=4, window_height=2, dim=4, epochs=5, batch_size=4, seed=3
    )
    pairs = separable_pairs(8, cfg.cols, rng)
    r1 = train(init_model(cfg), [((e.copy(), t.copy()), l) for (e, t), l in pairs], cfg)
    r2 = train(init_model(cfg), pairs, cfg)
    assert r1.epoch_losses == r2.epoch_losses
    for name, arr in r1.model.param_groups().items():
        assert np.array_equal(arr, r2.model.param_groups()[name]), name


def test_training_respects_attention_freeze():
    rng = np.random.default_rng(9)
    cfg = MatchModelConfig(
        filter_count=4, window_height=2, dim=4, epochs=3, batch_size=4,
        seed=2, train_attention=False,
    )
    pairs = separable_pairs(8, cfg.cols, rng)
    result = train(init_model(cfg), pairs, cfg)
    assert np.array_equal(result.model.a1, np.ones(3))
    assert np.array_equal(result.model.a2, np.ones(3))


def test_training_early_stop_cuts_epochs():
    rng = np.random.default_rng(10)
    cfg = MatchModelConfig(
        filter_count=4, window_height=2, dim=4, epochs=50, batch_size=4,
        seed=4, early_stop_loss=10.0,  # first epoch is ~ln 2, far below
    )
    pairs = separable_pairs(8, cfg.cols, rng)
    result = train(init_model(cfg), pairs, cfg)
    assert len(result.epoch_losses) == 1


def test_training_rejects_empty_and_single_label_sets():
    cfg = MatchModelConfig(filter_count=2, window_height=2, dim=3)
    with pytest.raises(TrainingError):
        train(init_model(cfg), [], cfg)
    rng = np.random.default_rng(0)
    fm = rand_fm(rng, 2, cfg.cols)
    ones = [((fm, fm), 1), ((fm.copy(), fm.copy()), 1)]
    with pytest.raises(TrainingError):
        train(init_model(cfg), ones, cfg)


# ---------------------------------------------------------------------------
# config and checkpoints


def test_config_validation_errors():
    with pytest.raises(ValueError):
        MatchModelConfig(filter_count=0)
    with pytest.raises(ValueError):
        MatchModelConfig(kma_k=0)
    with pytest.raises(ValueError):
        MatchModelConfig(decision_threshold=1.0)
    with pytest.raises(ValueError):
        MatchModelConfig(activation="tanh")
    with pytest.raises(ValueError):
        MatchModelConfig(optimizer="adam")


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    model = small_model(F=4, h=3, dim=5, k=2, seed=13)
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    assert back.config == model.config
    for name, arr in model.param_groups().items():
        assert np.array_equal(arr, back.param_groups()[name]), name
    rng = np.random.default_rng(14)
    pair = (rand_fm(rng, 3, model.config.cols), rand_fm(rng, 4, model.config.cols))
    assert forward(pair, back) == forward(pair, model)


def test_load_model_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else"}', encoding="utf-8")
    with pytest.raises(ValueError):
        load_model(path)
