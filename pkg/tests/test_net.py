import numpy as np
import pytest

from masd import loss as losses
from masd.net import Model, ModelConfig, load_checkpoint, save_checkpoint
from masd.net.model import CHECKPOINT_MAGIC


def tiny_config(**overrides):
    base = dict(channels=4, samples=32, n_classes=5, temporal_kernel=7,
                n_temporal_filters=2, depth_multiplier=2, separable_kernel=4,
                pool1=4, pool2=8, dropout_p=0.0, branch_dims=(8, 8))
    base.update(overrides)
    return ModelConfig(**base)


def batch(n=3, c=4, t=32, seed=0):
    return np.random.default_rng(seed).normal(size=(n, c, t))


class TestShapes:
    def test_feature_and_logit_shapes(self):
        model = Model(tiny_config(branch_dims=(8, 6)), seed=1)
        zt, zs = model.forward_features(batch())
        assert zt.shape == (3, 8)
        assert zs.shape == (3, 6)
        assert model.forward_logits(batch()).shape == (3, 5)

    def test_wide_head(self):
        model = Model(tiny_config(n_classes=48), seed=2)
        assert model.forward_logits(batch()).shape[1] == 48

    def test_default_scale_shapes(self):
        model = Model(ModelConfig(channels=64, samples=320), seed=2)
        model.eval()
        zt, zs = model.forward_features(batch(n=2, c=64, t=320, seed=3))
        assert zt.shape == (2, 64) and zs.shape == (2, 64)

    def test_head_affine_arithmetic(self):
        # zero the branches so the features equal the projection biases,
        # making the head's output a hand-computable affine map
        model = Model(tiny_config(branch_dims=(3, 2), n_classes=4), seed=30)
        model.eval()
        for p in model.params():
            p.data[...] = 0.0
        model.branch_t.b_proj.data[...] = [1.0, 2.0, 3.0]
        model.branch_s.b_proj.data[...] = [4.0, 5.0]
        rng = np.random.default_rng(31)
        model.w_head.data[...] = rng.normal(size=(5, 4))
        model.b_head.data[...] = rng.normal(size=4)
        z = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        expected = z @ model.w_head.data + model.b_head.data
        out = model.forward_logits(batch(n=2)).data
        assert np.allclose(out[0], expected, atol=1e-12)
        assert np.allclose(out[1], expected, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        model = Model(tiny_config(), seed=3)
        with pytest.raises(ValueError):
            model.forward_logits(np.zeros((2, 5, 32)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            tiny_config(samples=30).validate()  # pools do not divide
        with pytest.raises(ValueError):
            tiny_config(dropout_p=1.0).validate()


class TestForwardSemantics:
    def test_zero_weights_zero_features(self):
        model = Model(tiny_config(), seed=4)
        for p in model.params():
            p.data[...] = 0.0
        zt, zs = model.forward_features(batch())
        assert np.allclose(zt.data, 0.0, atol=1e-12)
        assert np.allclose(zs.data, 0.0, atol=1e-12)

    def test_eval_deterministic(self):
        model = Model(tiny_config(dropout_p=0.4), seed=5)
        model.eval()
        x = batch(seed=6)
        assert np.array_equal(model.forward_logits(x).data, model.forward_logits(x).data)

    def test_batch_independence_eval(self):
        model = Model(tiny_config(), seed=7)
        model.eval()
        x2 = batch(n=2, seed=8)
        single = model.forward_logits(x2[:1]).data
        double = model.forward_logits(x2).data
        assert np.allclose(single[0], double[0], atol=1e-12)

    def test_permutation_equivariance_eval(self):
        model = Model(tiny_config(), seed=9)
        model.eval()
        x = batch(n=4, seed=10)
        perm = np.array([2, 0, 3, 1])
        out = model.forward_logits(x).data
        out_p = model.forward_logits(x[perm]).data
        assert np.allclose(out[perm], out_p, atol=1e-12)

    def test_dropout_p0_train_equals_eval_with_batch_stats(self):
        # with momentum 1 the frozen stats equal the last batch stats, so
        # a p=0 train pass and an eval pass on the same batch must agree
        model = Model(tiny_config(bn_momentum=1.0), seed=11)
        x = batch(n=6, seed=12)
        model.train()
        train_out = model.forward_logits(x).data
        model.eval()
        eval_out = model.forward_logits(x).data
        assert np.array_equal(train_out, eval_out)

    def test_train_dropout_masks_differ(self):
        model = Model(tiny_config(dropout_p=0.5), seed=13)
        model.train()
        x = batch(seed=14)
        a = model.forward_logits(x).data
        b = model.forward_logits(x).data
        assert not np.array_equal(a, b)


class TestStructure:
    def test_depthwise_parameter_structure(self):
        cfg = tiny_config()
        model = Model(cfg, seed=15)
        counts = model.summary()
        expected = cfg.n_temporal_filters * cfg.channels * cfg.depth_multiplier
        assert counts["branch_t.w_depthwise"] == expected
        assert model.branch_t.w_depthwise.shape == (
            cfg.n_temporal_filters, cfg.channels, cfg.depth_multiplier)

    def test_summary_total(self):
        model = Model(tiny_config(), seed=16)
        counts = model.summary()
        assert counts["total"] == sum(v for k, v in counts.items() if k != "total")

    def test_seeded_init_deterministic(self):
        a = Model(tiny_config(), seed=17)
        b = Model(tiny_config(), seed=17)
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa.data, pb.data)


class TestGradients:
    def test_full_model_gradcheck(self):
        model = Model(tiny_config(), seed=18)
        x = batch(seed=19)
        y = np.array([0, 2, 4])
        zt_tab = np.random.default_rng(20).normal(size=(5, 8))
        zs_tab = np.random.default_rng(21).normal(size=(5, 8))
        cfg = losses.LossConfig(tau=0.5, lambda_t=1.0, lambda_s=0.7)

        def total():
            out = model.forward(x)
            return losses.total_loss(
                losses.cross_entropy(out.logits, y),
                losses.info_nce(out.features_text, zt_tab[y], cfg.tau),
                losses.info_nce(out.features_speech, zs_tab[y], cfg.tau),
                cfg,
            )

        model.zero_grad()
        total().backward()
        eps, worst = 1e-4, 0.0
        for p in model.params():
            flat = p.data.reshape(-1)
            grad = p.grad.reshape(-1)
            for i in np.linspace(0, flat.size - 1, min(4, flat.size)).astype(int):
                orig = flat[i]
                flat[i] = orig + eps
                hi = total().item()
                flat[i] = orig - eps
                lo = total().item()
                flat[i] = orig
                fd = (hi - lo) / (2 * eps)
                worst = max(worst, abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), 1e-6))
        assert worst < 1e-3


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = Model(tiny_config(branch_dims=(8, 6)), seed=22)
        model.train()
        model.forward(batch(seed=23))  # move running stats off their init
        model.eval()
        x = batch(seed=24)
        before = model.forward_logits(x).data
        path = tmp_path / "model.bin"
        save_checkpoint(model, path)
        restored = load_checkpoint(path)
        restored.eval()
        assert np.array_equal(restored.forward_logits(x).data, before)
        assert path.read_bytes()[:4] == CHECKPOINT_MAGIC

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        model = Model(tiny_config(), seed=25)
        path = tmp_path / "v.bin"
        save_checkpoint(model, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        model = Model(tiny_config(), seed=26)
        path = tmp_path / "t.bin"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 16])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        model = Model(tiny_config(), seed=27)
        path = tmp_path / "x.bin"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(path)


class TestStateDict:
    def test_roundtrip_restores_everything(self):
        model = Model(tiny_config(), seed=28)
        model.train()
        model.forward(batch(seed=29))
        state = model.state_dict()
        x = batch(seed=30)
        model.eval()
        before = model.forward_logits(x).data
        for p in model.params():
            p.data += 1.0
        model.load_state_dict(state)
        model.eval()
        assert np.array_equal(model.forward_logits(x).data, before)

    def test_missing_key_rejected(self):
        model = Model(tiny_config(), seed=31)
        state = model.state_dict()
        state.pop("head.b")
        with pytest.raises(KeyError):
            model.load_state_dict(state)
