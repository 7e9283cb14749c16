"""Architectures: widths, parameter audit, fusion, invariances, checkpoints."""

import numpy as np
import pytest

from orthoview.nn import tensor as T
from orthoview.nn.checkpoint import CheckpointError, load_model, save_checkpoint
from orthoview.nn.gradcheck import grad_check
from orthoview.nn.layers import Linear, ParamStore, ResNet18Backbone, count_params
from orthoview.nn.losses import smooth_loss
from orthoview.nn.models import ModelConfig, PointNetLite, SimpleViewNet, build_model, fuse_views
from orthoview.nn.optim import Adam
from orthoview.nn.tensor import Tensor, no_grad
from orthoview.rng import stream

TINY_SV = ModelConfig(arch="simpleview", n_classes=3, q=32, resolution=16, n_views=1, head_hidden=8)
TINY_PN = ModelConfig(arch="pointnet", n_classes=3, pointnet_widths=(4, 8), pointnet_head_hidden=6)


class TestWidthsAndCounts:
    def test_backbone_feature_width(self):
        backbone = ResNet18Backbone(4, stream(0, "bb"))
        assert backbone.out_width == 128
        out = backbone.forward(Tensor(stream(1, "x").random((2, 128, 128, 1))))
        assert out.shape == (2, 128)

    def test_feature_width_independent_of_resolution(self):
        backbone = ResNet18Backbone(4, stream(0, "bb"))
        out = backbone.forward(Tensor(stream(1, "x").random((2, 32, 32, 1))))
        assert out.shape == (2, 128)

    def test_parameter_count_in_table_band(self):
        # 0.8M parameters for the ModelNet40-sized head
        model = build_model(ModelConfig(arch="simpleview", n_classes=40), seed=0)
        assert 0.6e6 <= count_params(model) <= 1.0e6
        model8 = build_model(ModelConfig(arch="simpleview", n_classes=8), seed=0)
        assert 0.6e6 <= count_params(model8) <= 1.0e6

    def test_linear_param_count(self):
        lin = Linear(3, 2, rng=stream(0, "l"))
        assert count_params(lin) == 8

    def test_param_store_names_unique(self):
        store = ParamStore.from_module(build_model(TINY_SV, 0))
        names = [n for n, _ in store]
        assert len(names) == len(set(names))
        assert store.total_count == count_params(build_model(TINY_SV, 0))

    def test_zero_width_stage_rejected(self):
        with pytest.raises(ValueError, match="0 channels"):
            ResNet18Backbone(128, stream(0, "bb"))

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            ModelConfig(resolution=8)


class TestFusion:
    def test_pool_of_identical_views_is_identity(self):
        f = Tensor(np.tile(stream(2, "f").random((2, 1, 5)), (1, 4, 1)))
        fused = fuse_views(f, "pool")
        np.testing.assert_array_equal(fused.data, f.data[:, 0])

    def test_concat_width(self):
        f = Tensor(stream(3, "f").random((2, 6, 5)))
        assert fuse_views(f, "concat").shape == (2, 30)

    def test_pool_view_permutation_invariant_concat_not(self):
        cfg = ModelConfig(arch="simpleview", n_classes=4, q=32, resolution=16, n_views=6, fusion="pool")
        images = stream(4, "imgs").random((2, 6, 16, 16))
        perm = np.array([3, 1, 5, 0, 2, 4])
        pool_model = build_model(cfg, seed=5).eval()
        with no_grad():
            a = pool_model.forward(Tensor(images)).data
            b = pool_model.forward(Tensor(images[:, perm])).data
        assert np.array_equal(a, b)
        concat_model = build_model(
            ModelConfig(**{**cfg.to_dict(), "fusion": "concat", "pointnet_widths": cfg.pointnet_widths}), seed=5
        ).eval()
        with no_grad():
            a = concat_model.forward(Tensor(images)).data
            b = concat_model.forward(Tensor(images[:, perm])).data
        assert not np.allclose(a, b)

    def test_view_count_mismatch(self):
        model = build_model(TINY_SV, 0)
        with pytest.raises(ValueError, match="views"):
            model.forward(Tensor(np.zeros((1, 3, 16, 16))))


class TestPointNet:
    def test_point_permutation_bitwise_invariant(self):
        model = build_model(ModelConfig(arch="pointnet", n_classes=5), seed=1).eval()
        pts = stream(5, "pts").uniform(-1, 1, (3, 64, 3))
        perm = stream(6, "perm").permutation(64)
        with no_grad():
            a = model.forward(Tensor(pts)).data
            b = model.forward(Tensor(pts[:, perm])).data
        assert np.array_equal(a, b)

    def test_duplicate_point_invariant(self):
        model = build_model(ModelConfig(arch="pointnet", n_classes=5), seed=1).eval()
        pts = stream(7, "pts").uniform(-1, 1, (1, 32, 3))
        dup = np.concatenate([pts, pts[:, :1]], axis=1)
        base = np.concatenate([pts, pts[:, 31:]], axis=1)  # same multiset trick
        with no_grad():
            a = model.forward(Tensor(dup)).data
            b = model.forward(Tensor(base)).data
        # max pooling ignores duplicates entirely
        with no_grad():
            plain = model.forward(Tensor(pts)).data
        assert np.array_equal(a, plain) or np.allclose(a, plain)
        assert np.array_equal(b, plain) or np.allclose(b, plain)

    def test_single_point_cloud(self):
        model = build_model(ModelConfig(arch="pointnet", n_classes=5), seed=1).eval()
        with no_grad():
            out = model.forward(Tensor(stream(8, "p").random((2, 1, 3))))
        assert out.shape == (2, 5)
        assert np.all(np.isfinite(out.data))


class TestForwardSanity:
    def test_zero_input_finite_in_eval(self):
        model = build_model(TINY_SV, 0).eval()
        with no_grad():
            out = model.forward(Tensor(np.zeros((2, 1, 16, 16))))
        assert np.all(np.isfinite(out.data))

    def test_train_eval_flag_propagates(self):
        model = build_model(TINY_SV, 0)
        assert model.backbone.stem_bn.training
        model.eval()
        assert not model.backbone.stem_bn.training
        model.train()
        assert model.backbone.stem_bn.training

    def test_deterministic_forward(self):
        model = build_model(TINY_SV, 3).eval()
        x = Tensor(stream(9, "x").random((2, 1, 16, 16)))
        with no_grad():
            a = model.forward(x).data
            b = model.forward(x).data
        assert np.array_equal(a, b)

    def test_init_deterministic_by_seed(self):
        a = build_model(TINY_SV, 11)
        b = build_model(TINY_SV, 11)
        c = build_model(TINY_SV, 12)
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(pa.data, pb.data)
        assert any(
            not np.array_equal(pa.data, pc.data)
            for (_, pa), (_, pc) in zip(a.named_parameters(), c.named_parameters())
        )


class TestModelGradients:
    """Full-model losses against finite differences (tiny variants)."""

    def test_simpleview_tiny(self):
        model = build_model(TINY_SV, 7)
        images = stream(10, "gi").random((4, 1, 16, 16))
        labels = np.array([0, 2, 1, 0])

        def fn():
            return smooth_loss(model.forward(Tensor(images)), labels, 0.2)

        params = [p for _, p in model.named_parameters()]
        assert grad_check(fn, params, h=1e-5) < 1e-4

    def test_pointnet_tiny(self):
        model = build_model(TINY_PN, 7)
        pts = stream(11, "gp").uniform(-1, 1, (2, 12, 3))
        labels = np.array([1, 0])

        def fn():
            return cross_entropy_like(model, pts, labels)

        params = [p for _, p in model.named_parameters()]
        assert grad_check(fn, params, h=1e-5) < 1e-5


def cross_entropy_like(model, pts, labels):
    return smooth_loss(model.forward(Tensor(pts)), labels, 0.0)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        cfg = TINY_SV
        model = build_model(cfg, 21)
        opt = Adam(model.parameters(), lr=1e-3)
        x = Tensor(stream(12, "ck").random((2, 1, 16, 16)))
        loss = smooth_loss(model.forward(x), np.array([0, 1]), 0.2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        path = tmp_path / "m.ovck"
        save_checkpoint(path, cfg, model, opt)
        back, cfg2 = load_model(path)
        assert cfg2 == cfg
        for (_, pa), (_, pb) in zip(model.named_parameters(), back.named_parameters()):
            assert np.array_equal(pa.data, pb.data)
        for (_, ba), (_, bb) in zip(model.named_buffers(), back.named_buffers()):
            assert np.array_equal(ba, bb)
        model.eval()
        back.eval()
        with no_grad():
            assert np.array_equal(model.forward(x).data, back.forward(x).data)

    def test_config_mismatch_rejected(self, tmp_path):
        model = build_model(TINY_SV, 0)
        save_checkpoint(tmp_path / "m.ovck", TINY_SV, model)
        other = ModelConfig(**{**TINY_SV.to_dict(), "n_views": 3, "pointnet_widths": TINY_SV.pointnet_widths})
        with pytest.raises(CheckpointError, match="does not match"):
            load_model(tmp_path / "m.ovck", expect_cfg=other)

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "junk.ovck").write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_model(tmp_path / "junk.ovck")
