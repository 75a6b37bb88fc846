"""Network shape contracts, initialization statistics, and the bit-exact
checkpoint container."""

import numpy as np
import pytest

import discgen as dg
from discgen import autodiff as ad
from discgen import checkpoint as ckpt


class TestArchConfig:
    def test_divisibility_enforced(self):
        with pytest.raises(ValueError):
            dg.ArchConfig(image_shape=(1, 20, 20), stages=3)

    def test_filter_doubling_and_halving(self):
        arch = dg.ArchConfig(image_shape=(1, 32, 32), base_filters=8, stages=3)
        assert arch.stage_filters == (8, 16, 32)
        bundle = dg.init_bundle(arch, dg.make_rng(0))
        enc_out_channels = [c.w.data.shape[0] for c in bundle.encoder.convs]
        assert enc_out_channels == [8, 16, 32]
        dec_out_channels = [c.w.data.shape[1] for c in bundle.decoder.tconvs]
        assert dec_out_channels == [16, 8, 1]

    def test_feature_layer_bounds(self):
        with pytest.raises(ValueError):
            dg.ArchConfig(image_shape=(1, 32, 32), stages=3, feature_layers=(5,))


class TestEncodeDecodeClassify:
    def test_posterior_shapes(self, tiny_bundle, tiny_arch):
        x = ad.Tensor(np.zeros((3, 1, 8, 8)))
        q = dg.encode(tiny_bundle, x, "train")
        assert q.mean.shape == (3, tiny_arch.latent_dim)
        assert q.log_var.shape == (3, tiny_arch.latent_dim)

    def test_identical_inputs_identical_rows(self, tiny_bundle):
        rng = np.random.default_rng(0)
        one = rng.uniform(-1, 1, (1, 1, 8, 8))
        x = ad.Tensor(np.concatenate([one, one], axis=0))
        q = dg.encode(tiny_bundle, x, "infer")
        np.testing.assert_array_equal(q.mean.data[0], q.mean.data[1])
        np.testing.assert_array_equal(q.log_var.data[0], q.log_var.data[1])

    def test_encoder_gradient_matches_finite_differences(self, f64):
        arch = dg.ArchConfig(image_shape=(1, 8, 8), latent_dim=3, base_filters=2,
                             stages=2, label_count=2, dense_units=4)
        bundle = dg.init_bundle(arch, dg.make_rng(1))
        x = ad.Tensor(np.random.default_rng(2).uniform(-1, 1, (3, 1, 8, 8)))
        params = bundle.encoder.params()

        def build():
            return ad.tensor_sum(dg.encode(bundle, x, "train").mean)

        assert ad.gradient_check(build, params, num_coords=80) <= 1e-3

    def test_decode_shape_and_range(self, tiny_bundle, tiny_arch):
        z = ad.Tensor(np.random.default_rng(3).normal(size=(5, tiny_arch.latent_dim)))
        out = dg.decode(tiny_bundle, z, "train")
        assert out.shape == (5, 1, 8, 8)
        assert np.all(out.data > -1.0) and np.all(out.data < 1.0)

    def test_spatial_contract_round_trip(self):
        # encoder halves H,W per stage; decoder doubles back to image shape
        for hw, stages in ((16, 2), (32, 3), (64, 3)):
            arch = dg.ArchConfig(image_shape=(1, hw, hw), latent_dim=4,
                                 base_filters=2, stages=stages, label_count=2, dense_units=4)
            bundle = dg.init_bundle(arch, dg.make_rng(4))
            x = ad.Tensor(np.zeros((2, 1, hw, hw)))
            q = dg.encode(bundle, x, "infer")
            out = dg.decode(bundle, q.mean, "infer")
            assert out.shape == (2, 1, hw, hw)

    def test_classifier_feature_count(self, tiny_bundle, tiny_arch):
        x = ad.Tensor(np.zeros((2, 1, 8, 8)))
        features, logits = dg.classify(tiny_bundle, x, "infer")
        assert len(features) == tiny_arch.stages + 1
        assert logits.shape == (2, tiny_arch.label_count)

    def test_frozen_classifier_zero_gradients(self, tiny_bundle):
        tiny_bundle.set_classifier_trainable(False)
        x = ad.Tensor(np.random.default_rng(5).uniform(-1, 1, (2, 1, 8, 8)))
        x.requires_grad = True
        features, logits = dg.classify(tiny_bundle, x, "infer")
        ad.backward(ad.tensor_sum(ad.square(logits)))
        for p in tiny_bundle.classifier_params():
            assert not p.grad.any()
        assert x.grad is not None and np.abs(x.grad).sum() > 0

    def test_shape_mismatch_rejected(self, tiny_bundle):
        with pytest.raises(ad.ShapeError):
            dg.encode(tiny_bundle, ad.Tensor(np.zeros((2, 1, 16, 16))), "train")
        with pytest.raises(ad.ShapeError):
            dg.decode(tiny_bundle, ad.Tensor(np.zeros((2, 9))), "train")


class TestInit:
    def test_fixed_seed_identical_bundles(self, tiny_arch):
        a = dg.init_bundle(tiny_arch, dg.make_rng(9))
        b = dg.init_bundle(tiny_arch, dg.make_rng(9))
        for pa, pb in zip(a.all_params(), b.all_params()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_weight_scale(self):
        arch = dg.ArchConfig(image_shape=(1, 32, 32), latent_dim=64,
                             base_filters=32, stages=3, label_count=5, dense_units=256)
        bundle = dg.init_bundle(arch, dg.make_rng(10))
        big = [p for p in bundle.all_params() if p.data.size >= 10 ** 4 and p.name.endswith(".w")]
        assert big
        for p in big:
            assert abs(p.data.var() - 0.02 ** 2) <= 0.1 * 0.02 ** 2

    def test_forward_finite(self, tiny_bundle):
        x = ad.Tensor(np.random.default_rng(11).uniform(-1, 1, (4, 1, 8, 8)))
        q = dg.encode(tiny_bundle, x, "train")
        out = dg.decode(tiny_bundle, q.mean, "train")
        feats, logits = dg.classify(tiny_bundle, out, "infer")
        for t in [q.mean, q.log_var, out, logits, *feats]:
            assert np.all(np.isfinite(t.data))


class TestCheckpointContainer:
    def test_round_trip_bytes_identical(self, tmp_path, tiny_bundle):
        p1 = tmp_path / "a.dgn"
        p2 = tmp_path / "b.dgn"
        dg.save_checkpoint(tiny_bundle, p1)
        loaded = dg.load_checkpoint(p1)
        dg.save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_file_is_header_only(self, tmp_path):
        path = tmp_path / "empty.dgn"
        ckpt.write_tensor_file(path, {})
        assert path.stat().st_size == 16  # magic + version + count + crc
        assert ckpt.read_tensor_file(path) == {}

    def test_values_survive_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        tensors = {
            "a": rng.normal(size=(3, 4)).astype(np.float32),
            "b": rng.normal(size=(2, 2, 2)).astype(np.float64),
            "scalar": np.float32(3.5).reshape(()),
        }
        path = tmp_path / "t.dgn"
        ckpt.write_tensor_file(path, tensors)
        out = ckpt.read_tensor_file(path)
        assert list(out) == ["a", "b", "scalar"]
        for name in tensors:
            np.testing.assert_array_equal(out[name], tensors[name])
            assert out[name].dtype == tensors[name].dtype

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dgn"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(ckpt.BadMagicError):
            ckpt.read_tensor_file(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v.dgn"
        ckpt.write_tensor_file(path, {})
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(ckpt.VersionMismatchError):
            ckpt.read_tensor_file(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "t.dgn"
        ckpt.write_tensor_file(path, {"a": np.ones((4, 4), dtype=np.float32)})
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises((ckpt.TruncatedFileError, ckpt.TensorShapeError)):
            ckpt.read_tensor_file(path)

    def test_corrupted_dimension_reports_shape_error(self, tmp_path):
        path = tmp_path / "c.dgn"
        ckpt.write_tensor_file(path, {"a": np.ones((4, 4), dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        # dims start after magic(4)+version/count(8)+namelen(2)+name(1)+dtype/ndim(2)
        dims_offset = 4 + 8 + 2 + 1 + 2
        stored = int.from_bytes(raw[dims_offset : dims_offset + 4], "little")
        assert stored == 4
        raw[dims_offset : dims_offset + 4] = (4000).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(ckpt.TensorShapeError):
            ckpt.read_tensor_file(path)

    def test_crc_mismatch(self, tmp_path):
        path = tmp_path / "crc.dgn"
        ckpt.write_tensor_file(path, {"a": np.ones(8, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[-6] ^= 0xFF  # flip a payload byte, keep structure valid
        path.write_bytes(bytes(raw))
        with pytest.raises(ckpt.CrcMismatchError):
            ckpt.read_tensor_file(path)

    def test_classifier_checkpoint_loads_into_matching_bundle(self, tmp_path, tiny_arch):
        donor = dg.init_bundle(tiny_arch, dg.make_rng(13))
        path = tmp_path / "clf.dgn"
        ckpt.save_classifier_checkpoint(donor, path)
        target = dg.init_bundle(tiny_arch, dg.make_rng(14))
        ckpt.load_classifier_into(target, path)
        for pd, pt in zip(donor.classifier_params(), target.classifier_params()):
            np.testing.assert_array_equal(pd.data, pt.data)
        # encoder untouched
        assert not np.array_equal(donor.encoder.convs[0].w.data,
                                  target.encoder.convs[0].w.data)

    def test_classifier_arch_mismatch_rejected(self, tmp_path, tiny_arch):
        donor = dg.init_bundle(tiny_arch, dg.make_rng(15))
        path = tmp_path / "clf.dgn"
        ckpt.save_classifier_checkpoint(donor, path)
        other = dg.ArchConfig(image_shape=(1, 16, 16), latent_dim=4, base_filters=3,
                              stages=2, label_count=5, dense_units=6)
        target = dg.init_bundle(other, dg.make_rng(16))
        with pytest.raises(ckpt.CheckpointError):
            ckpt.load_classifier_into(target, path)
