import numpy as np
import pytest

from tavst.coattn import coattend, joint_contexts
from tavst.gradcheck import grad_check
from tavst.params import ModelDims, init_params
from tavst.tensor import Precision, Tensor, add, reduce_sum, stack_rows
from tavst.topic import TopicMemory
from tavst.visual import VisualContext


def model_params(hidden=4, seed=0):
    dims = ModelDims(hidden=hidden, feature_dim=3, images_per_album=2,
                     topic_vocab=8, story_vocab=9)
    return init_params(dims, np.random.default_rng(seed), Precision.VERIFY)


def matrix(values):
    return Tensor(np.asarray(values, dtype=np.float64))


def make_visual(rows_data):
    rows = [Tensor(np.asarray(r, dtype=np.float64)) for r in rows_data]
    return VisualContext(rows=rows, matrix=stack_rows(rows))


def make_memory(rows_data):
    rows = [Tensor(np.asarray(r, dtype=np.float64)) for r in rows_data]
    return TopicMemory(rows=rows, matrix=stack_rows(rows), tokens=[0] * len(rows),
                       logprobs=[])


# ---------------------------------------------------------------------------
# coattend
# ---------------------------------------------------------------------------


def test_singleton_visual_attention_is_exactly_one():
    params = model_params(seed=1)
    rng = np.random.default_rng(0)
    h_v = matrix(rng.normal(size=(1, 4)))
    h_t = matrix(rng.normal(size=(3, 4)))
    att_v, _, (a_v, _) = coattend(h_v, h_t, params)
    assert a_v.shape == (1,)
    assert a_v[0] == 1.0
    assert np.allclose(att_v.data, h_v.data[0])


def test_identical_topic_rows_get_uniform_attention():
    params = model_params(seed=2)
    rng = np.random.default_rng(1)
    h_v = matrix(rng.normal(size=(2, 4)))
    row = rng.normal(size=4)
    h_t = matrix(np.stack([row] * 5))
    _, _, (_, a_t) = coattend(h_v, h_t, params)
    assert np.allclose(a_t, 0.2, atol=1e-12)


def test_attention_weights_are_distributions():
    params = model_params(seed=3)
    rng = np.random.default_rng(2)
    for _ in range(10):
        h_v = matrix(rng.normal(size=(rng.integers(1, 5), 4)))
        h_t = matrix(rng.normal(size=(rng.integers(2, 6), 4)))
        _, _, (a_v, a_t) = coattend(h_v, h_t, params)
        for w in (a_v, a_t):
            assert np.all(w >= 0)
            assert abs(w.sum() - 1.0) < 1e-6


def test_topic_row_permutation_equivariance():
    params = model_params(seed=4)
    rng = np.random.default_rng(3)
    h_v = matrix(rng.normal(size=(2, 4)))
    rows = rng.normal(size=(5, 4))
    perm = np.array([3, 0, 4, 1, 2])
    _, att_t, (_, a_t) = coattend(h_v, matrix(rows), params)
    _, att_t_p, (_, a_t_p) = coattend(h_v, matrix(rows[perm]), params)
    assert np.allclose(a_t_p, a_t[perm], atol=1e-6)
    assert np.allclose(att_t_p.data, att_t.data, atol=1e-6)


def test_coattend_gradient_matches_finite_differences():
    params = model_params(hidden=3, seed=5)
    rng = np.random.default_rng(4)
    h_v_rows = rng.normal(0, 0.5, size=(2, 3))
    h_t_rows = rng.normal(0, 0.5, size=(3, 3))

    class Sub(dict):
        def items(self):
            return sorted(super().items())

    sub = Sub()
    for name, tensor in params.items():
        if name.startswith("coatt.") and name != "coatt.w_fc":
            sub[name] = tensor

    def f():
        att_v, att_t, _ = coattend(matrix(h_v_rows), matrix(h_t_rows), params)
        return reduce_sum(add(att_v, att_t))

    report = grad_check(f, sub, label="coattend")
    assert report.passed
    assert report.worst().rel_error < 1e-4


def test_shape_validation():
    params = model_params()
    with pytest.raises(ValueError):
        coattend(matrix(np.zeros((2, 4))), matrix(np.zeros((3, 5))), params)


# ---------------------------------------------------------------------------
# joint contexts
# ---------------------------------------------------------------------------


def test_global_scope_replicates_one_vector():
    params = model_params(seed=6)
    rng = np.random.default_rng(5)
    visual = make_visual(rng.normal(size=(3, 4)))
    memory = make_memory(rng.normal(size=(4, 4)))
    joint = joint_contexts(visual, memory, params, scope="global")
    assert len(joint.rows) == 3
    for r in joint.rows[1:]:
        assert np.array_equal(r.data, joint.rows[0].data)


def test_per_image_scope_distinguishes_rows():
    params = model_params(seed=7)
    rng = np.random.default_rng(6)
    visual = make_visual(rng.normal(size=(2, 4)))
    memory = make_memory(rng.normal(size=(3, 4)))
    joint = joint_contexts(visual, memory, params, scope="per_image")
    assert not np.allclose(joint.rows[0].data, joint.rows[1].data)
    for a_t in joint.attn_t:
        assert abs(a_t.sum() - 1.0) < 1e-6


def test_single_image_scopes_coincide():
    params = model_params(seed=8)
    rng = np.random.default_rng(7)
    visual = make_visual(rng.normal(size=(1, 4)))
    memory = make_memory(rng.normal(size=(3, 4)))
    per_image = joint_contexts(visual, memory, params, scope="per_image")
    global_ = joint_contexts(visual, memory, params, scope="global")
    assert np.allclose(per_image.rows[0].data, global_.rows[0].data, atol=1e-12)


def test_unknown_scope_is_rejected():
    params = model_params()
    visual = make_visual(np.zeros((1, 4)))
    memory = make_memory(np.zeros((2, 4)))
    with pytest.raises(ValueError, match="scope"):
        joint_contexts(visual, memory, params, scope="both")
