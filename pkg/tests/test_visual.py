import numpy as np
import pytest

from tavst.gradcheck import grad_check
from tavst.params import GRUWeights, ModelDims, init_params
from tavst.tensor import Precision, Tensor, reduce_sum
from tavst.visual import encode_album, gru_cell


class Params(dict):
    def items(self):
        return sorted(super().items())


def make_gru(rng, in_dim, hidden, scale=0.5):
    p = Params()
    for g in ("z", "r", "c"):
        p[f"w_{g}"] = Tensor(rng.normal(0, scale, (hidden, in_dim + hidden)),
                             requires_grad=True)
        p[f"b_{g}"] = Tensor(rng.normal(0, scale, (hidden,)), requires_grad=True)
    return p


def weights(p):
    return GRUWeights(p["w_z"], p["b_z"], p["w_r"], p["b_r"], p["w_c"], p["b_c"])


def model_params(hidden=4, feat=3, n=3, seed=0, precision=Precision.VERIFY):
    dims = ModelDims(hidden=hidden, feature_dim=feat, images_per_album=n,
                     topic_vocab=8, story_vocab=9)
    return init_params(dims, np.random.default_rng(seed), precision)


# ---------------------------------------------------------------------------
# gru cell
# ---------------------------------------------------------------------------


def test_gru_zero_weights_halves_previous_state():
    p = make_gru(np.random.default_rng(0), 2, 3, scale=0.0)
    h_prev = np.array([0.4, -0.6, 1.0])
    out = gru_cell(Tensor(np.zeros(2)), Tensor(h_prev), weights(p))
    assert np.allclose(out.data, 0.5 * h_prev)


def test_gru_candidate_path_with_zero_state():
    rng = np.random.default_rng(1)
    p = make_gru(rng, 2, 3)
    x = np.array([0.3, -0.2])
    out = gru_cell(Tensor(x), Tensor(np.zeros(3)), weights(p))
    xh = np.concatenate([x, np.zeros(3)])
    z = 1 / (1 + np.exp(-(p["w_z"].data @ xh + p["b_z"].data)))
    cand = np.tanh(p["w_c"].data @ xh + p["b_c"].data)
    assert np.allclose(out.data, z * cand)


def test_gru_gradient_matches_finite_differences():
    p = make_gru(np.random.default_rng(2), 4, 4)
    x = np.random.default_rng(3).normal(0, 0.5, 4)
    h0 = np.random.default_rng(4).normal(0, 0.5, 4)

    def f():
        return reduce_sum(gru_cell(Tensor(x), Tensor(h0), weights(p)))

    report = grad_check(f, p, label="gru_cell")
    assert report.passed
    assert report.worst().rel_error < 1e-4


def test_gru_chain_gradient_through_hidden_state():
    # regression: gradients must be complete at the hidden state before they
    # propagate into the previous step
    p = make_gru(np.random.default_rng(5), 2, 3)
    xs = np.random.default_rng(6).normal(0, 0.5, (3, 2))

    def f():
        h = Tensor(np.zeros(3))
        for i in range(3):
            h = gru_cell(Tensor(xs[i]), h, weights(p))
        return reduce_sum(h)

    assert grad_check(f, p, label="gru chain").passed


# ---------------------------------------------------------------------------
# album encoding
# ---------------------------------------------------------------------------


def test_single_image_album_shape_and_sign():
    params = model_params(n=1)
    feats = np.random.default_rng(0).normal(size=(1, 3))
    ctx = encode_album(feats, params)
    assert ctx.matrix.shape == (1, 4)
    assert np.all(ctx.matrix.data >= 0.0)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_output_shape_and_relu_image(n):
    params = model_params(n=n)
    feats = np.random.default_rng(n).normal(size=(n, 3))
    ctx = encode_album(feats, params)
    assert ctx.matrix.shape == (n, 4)
    assert np.all(ctx.matrix.data >= 0.0)
    assert np.all(np.isfinite(ctx.matrix.data))


def test_zero_features_zero_biases_give_zero_context():
    params = model_params()
    for name, tensor in params.items():
        if name.startswith("venc.") and ".b_" in name:
            tensor.data[...] = 0.0
    ctx = encode_album(np.zeros((3, 3)), params)
    assert np.all(ctx.matrix.data == 0.0)


def test_reversed_input_with_tied_directions_reverses_rows():
    params = model_params()
    # tie the two directions and make the 2H->H projection symmetric in its halves
    for g in ("z", "r", "c"):
        params[f"venc.bwd.w_{g}"].data[...] = params[f"venc.fwd.w_{g}"].data
        params[f"venc.bwd.b_{g}"].data[...] = params[f"venc.fwd.b_{g}"].data
    h = params["venc.w_cat"].data.shape[0]
    params["venc.w_cat"].data[:, h:] = params["venc.w_cat"].data[:, :h]
    feats = np.random.default_rng(8).normal(size=(4, 3))
    fwd_ctx = encode_album(feats, params).matrix.data
    rev_ctx = encode_album(feats[::-1].copy(), params).matrix.data
    assert np.allclose(rev_ctx, fwd_ctx[::-1], atol=1e-12)


def test_every_feature_influences_every_context_row():
    # positive weights + positive features keep every ReLU unit active, so
    # the bidirectional information flow is observable in every row
    params = model_params(n=3)
    for name, tensor in params.items():
        if name.startswith("venc."):
            tensor.data[...] = np.abs(tensor.data)
    rng = np.random.default_rng(9)
    feats = np.abs(rng.normal(size=(3, 3))) + 0.1
    base = encode_album(feats, params).matrix.data.copy()
    for j in range(3):
        bumped = feats.copy()
        bumped[j] += 0.25
        moved = encode_album(bumped, params).matrix.data
        for i in range(3):
            assert np.abs(moved[i] - base[i]).max() > 0.0, (i, j)


def test_dimension_mismatch_is_rejected():
    params = model_params(feat=3)
    with pytest.raises(ValueError, match="feature dim"):
        encode_album(np.zeros((2, 5)), params)


def test_encoder_gradient_through_full_module():
    params = model_params(hidden=3, feat=2, n=2, seed=1)
    feats = np.random.default_rng(2).normal(size=(2, 2))

    def f():
        return reduce_sum(encode_album(feats, params).matrix)

    venc_only = Params()
    for name, tensor in params.items():
        if name.startswith("venc."):
            venc_only[name] = tensor
    assert grad_check(f, venc_only, label="visual encoder").passed
