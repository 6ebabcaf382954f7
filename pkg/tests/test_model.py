import numpy as np
import pytest

from jointvit import autodiff as ad
from jointvit.data import LabeledInstance
from jointvit.errors import ConfigError, ContractError, DimensionError
from jointvit.losses import JointLossConfig, joint_loss, one_hot
from jointvit.model import (
    ViTConfig, forward, init_params, param_count, param_shapes, patchify, predict_class,
    predict_instance, unpatchify,
)


def enumerate_parameters(cfg: ViTConfig) -> int:
    """Count weights layer by layer, without the shape table."""
    d, h = cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio
    n = cfg.patch_size ** 2 * cfg.channels * d + d  # patch projection
    n += d + (cfg.num_patches + 1) * d  # class token, positions
    for _ in range(cfg.depth):
        n += 2 * d  # norm1
        n += 4 * (d * d + d)  # q, k, v, out
        n += 2 * d  # norm2
        n += d * h + h + h * d + d  # mlp
    n += 2 * d  # final norm
    n += d * cfg.num_classes + cfg.num_classes
    n += d + 1
    return n


class TestConfig:
    def test_default_parameter_count(self):
        cfg = ViTConfig()
        assert param_count(cfg) == enumerate_parameters(cfg) == 217924
        assert init_params(cfg, 0).num_parameters() == 217924

    @pytest.mark.parametrize("kw", [dict(depth=2), dict(embed_dim=32, heads=8), dict(num_classes=5),
                                    dict(image_size=32, patch_size=8, channels=3)])
    def test_count_is_function_of_config(self, kw):
        cfg = ViTConfig(**kw)
        assert param_count(cfg) == enumerate_parameters(cfg) == init_params(cfg, 3).num_parameters()

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError, match="divisible by heads"):
            init_params(ViTConfig(embed_dim=65, heads=4), 0)

    def test_violations_are_listed_together(self):
        with pytest.raises(ConfigError) as e:
            ViTConfig(image_size=30, patch_size=16, num_classes=1).validate()
        assert "patch_size" in str(e.value) and "num_classes" in str(e.value)

    def test_canonical_names(self):
        names = list(param_shapes(ViTConfig(depth=1)))
        assert "block.0.attn.q.weight" in names
        assert names[0] == "patch_embed.weight" and names[-1] == "head_value.bias"


class TestInit:
    def test_same_seed_bitwise(self):
        a, b = init_params(ViTConfig(depth=1), 7), init_params(ViTConfig(depth=1), 7)
        for (n1, t1), (n2, t2) in zip(a.items(), b.items()):
            assert n1 == n2 and t1.data.tobytes() == t2.data.tobytes()

    def test_initial_values(self):
        p = init_params(ViTConfig(depth=1), 0)
        assert np.all(p["block.0.attn.q.bias"].data == 0)
        assert np.all(p["norm.weight"].data == 1)
        w = p["block.0.mlp.fc1.weight"].data
        assert np.max(np.abs(w)) <= 0.04 and 0.015 < w.std() < 0.02
        assert p.all_finite()


class TestPatchify:
    def test_shape(self):
        assert patchify(np.zeros((32, 32, 1)), 16).shape == (4, 256)

    def test_constant_image(self):
        assert np.all(patchify(np.full((32, 32, 1), 0.3), 16) == 0.3)

    def test_round_trip(self, rng):
        img = rng.normal(size=(48, 32, 3))
        np.testing.assert_array_equal(unpatchify(patchify(img, 16), 16, 48, 32, 3), img)

    def test_order_is_row_major(self):
        img = np.arange(16.0).reshape(4, 4, 1)
        p = patchify(img, 2)
        np.testing.assert_array_equal(p[0], [0, 1, 4, 5])
        np.testing.assert_array_equal(p[1], [2, 3, 6, 7])
        np.testing.assert_array_equal(p[2], [8, 9, 12, 13])

    def test_indivisible(self):
        with pytest.raises(DimensionError):
            patchify(np.zeros((30, 32, 1)), 16)


class TestForward:
    def test_shapes_default_config(self, rng):
        params = init_params(ViTConfig(), 0)
        logits, value = forward(params, rng.uniform(size=(2, 64, 64, 1)))
        assert logits.shape == (2, 3) and value.shape == (2,)
        assert np.all(np.isfinite(logits.data)) and np.all(np.isfinite(value.data))

    def test_batch_permutation(self, tiny_params, rng):
        x = rng.uniform(size=(4, 16, 16, 1))
        perm = np.array([2, 0, 3, 1])
        l1, v1 = forward(tiny_params, x)
        l2, v2 = forward(tiny_params, x[perm])
        np.testing.assert_allclose(l2.data, l1.data[perm], rtol=0, atol=1e-13)
        np.testing.assert_allclose(v2.data, v1.data[perm], rtol=0, atol=1e-13)

    def test_zero_head_weights_give_bias(self, tiny_params, rng):
        tiny_params["head_class.weight"].data[:] = 0
        tiny_params["head_class.bias"].data[:] = [0.1, -0.2, 0.3]
        tiny_params["head_value.weight"].data[:] = 0
        tiny_params["head_value.bias"].data[:] = 0.95
        logits, value = forward(tiny_params, rng.uniform(size=(3, 16, 16, 1)))
        np.testing.assert_array_equal(logits.data, np.tile([0.1, -0.2, 0.3], (3, 1)))
        np.testing.assert_array_equal(value.data, [0.95] * 3)

    def test_shape_mismatch(self, tiny_params):
        with pytest.raises(DimensionError):
            forward(tiny_params, np.zeros((1, 32, 32, 1)))

    def test_dropout_needs_rng_only_in_train_mode(self, rng):
        params = init_params(ViTConfig(image_size=16, patch_size=4, embed_dim=16, depth=1, heads=2, dropout=0.1), 0)
        x = rng.uniform(size=(2, 16, 16, 1))
        forward(params, x)
        with pytest.raises(ContractError):
            forward(params, x, train_mode=True)
        a, _ = forward(params, x, train_mode=True, rng=np.random.default_rng(0))
        b, _ = forward(params, x)
        assert not np.allclose(a.data, b.data)

    @pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
    def test_head_gradient_flow(self, tiny_params, rng, lam):
        x = rng.uniform(size=(3, 16, 16, 1))
        y = one_hot([0, 1, 2], 3)
        v = np.array([0.9, 0.94, 0.98])
        with ad.Graph() as g:
            logits, value = forward(tiny_params, x)
            loss = joint_loss(logits, value, y, v, JointLossConfig(lam=lam))
        ad.backward(g, loss, list(tiny_params))
        cls_g = tiny_params["head_class.weight"].grad
        val_g = tiny_params["head_value.weight"].grad
        if lam == 1.0:
            assert np.all(val_g == 0.0) and np.any(cls_g != 0)
        elif lam == 0.0:
            assert np.all(cls_g == 0.0) and np.any(val_g != 0)
        else:
            assert np.any(cls_g != 0) and np.any(val_g != 0)


class TestPrediction:
    def test_argmax(self):
        assert predict_class(np.array([[0.1, 2.0, -1.0]]))[0] == 1

    def test_ties_go_to_lowest_index(self):
        assert predict_class(np.array([[5.0, 5.0, 5.0]]))[0] == 0

    def test_shift_invariance(self, rng):
        z = rng.normal(size=(10, 3))
        np.testing.assert_array_equal(predict_class(z), predict_class(z + 17.5))

    def test_single_slice_instance_matches_forward(self, tiny_params, rng):
        s = rng.uniform(size=(16, 16, 1))
        cls, val = predict_instance(tiny_params, LabeledInstance("a", [s], 94.0))
        logits, value = forward(tiny_params, s[None])
        assert cls == predict_class(logits)[0]
        assert val == value.data[0]

    def test_duplicate_slice_is_idempotent(self, tiny_params, rng):
        s = rng.uniform(size=(16, 16, 1))
        once = predict_instance(tiny_params, LabeledInstance("a", [s], 94.0))
        twice = predict_instance(tiny_params, LabeledInstance("a", [s, s], 94.0))
        assert once[0] == twice[0]
        assert abs(once[1] - twice[1]) < 1e-15

    def test_mean_logit_tie_breaks_low(self, tiny_params, rng, monkeypatch):
        import jointvit.model as m

        class FakeT:
            def __init__(self, d):
                self.data = np.asarray(d, dtype=float)

        monkeypatch.setattr(m, "forward", lambda p, x: (FakeT([[2, 0, 0], [0, 2, 0]]), FakeT([0.9, 0.9])))
        inst = LabeledInstance("a", [np.zeros((16, 16, 1))] * 2, 94.0)
        assert predict_instance(tiny_params, inst)[0] == 0

    def test_empty_instance(self, tiny_params):
        from jointvit.model import instance_outputs

        with pytest.raises(ContractError):
            instance_outputs(tiny_params, [])
