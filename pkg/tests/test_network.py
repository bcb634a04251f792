import numpy as np
import pytest

from dyntrack.network import (CheckpointError, LayerConfig, Network,
                              NetworkSpec, load_checkpoint, make_spec,
                              read_checkpoint, reinit_fc_stack,
                              save_checkpoint)
from dyntrack.nn import softmax_cross_entropy

from reference import numgrad, rel_err


def tiny_spec(k=1, roi_kind="align", fc_out=8):
    """Small but structurally faithful spec for fast gradient work."""
    trunk = [
        LayerConfig("conv", dict(in_channels=3, out_channels=4, ksize=3,
                                 stride=2, pad=0)),
        LayerConfig("relu"),
        LayerConfig("lrn", dict(n=3, k=2.0, alpha=5e-4, beta=0.75)),
        LayerConfig("maxpool", dict(ksize=2, stride=2)),
        LayerConfig("conv", dict(in_channels=4, out_channels=6, ksize=3,
                                 stride=1, pad=1)),
        LayerConfig("relu"),
    ]
    fc_trunk = [
        LayerConfig("fc", dict(in_dim=6 * 4, out_dim=fc_out)),
        LayerConfig("relu"),
        LayerConfig("dropout", dict(rate=0.5)),
    ]
    return NetworkSpec(trunk=trunk, fc_trunk=fc_trunk, head_branches=k,
                       roi_size=(2, 2))


class TestSpec:
    def test_default_structure(self):
        spec = make_spec("default", k=3)
        assert spec.feature_stride() == 16
        assert spec.trunk_out_channels() == 512
        assert spec.head_in_dim() == 512
        assert spec.min_input_size() == 75
        convs = [c for c in spec.trunk if c.kind == "conv"]
        assert [c.params["ksize"] for c in convs] == [7, 5, 3]
        assert [c.params["out_channels"] for c in convs] == [96, 256, 512]

    def test_conv5_variant_adds_two_convs_same_stride(self):
        spec = make_spec("conv5")
        convs = [c for c in spec.trunk if c.kind == "conv"]
        assert len(convs) == 5
        assert spec.feature_stride() == 16
        assert len([c for c in spec.fc_trunk if c.kind == "fc"]) == 2

    def test_fc2_variant_has_one_trunk_fc(self):
        spec = make_spec("fc2")
        assert len([c for c in spec.fc_trunk if c.kind == "fc"]) == 1
        assert spec.head_in_dim() == 512

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError, match="branches"):
            make_spec("default", k=0).validate()
        with pytest.raises(ValueError, match="unknown variant"):
            make_spec("vggm")
        spec = tiny_spec()
        spec.fc_trunk[0].params["in_dim"] = 99
        with pytest.raises(ValueError, match="pooled feature"):
            spec.validate()
        bad = tiny_spec()
        bad.trunk[0].params["stride"] = 0
        with pytest.raises(ValueError, match="stride"):
            bad.validate()

    def test_spec_dict_round_trip(self):
        spec = make_spec("conv5", k=4, roi_kind="pool")
        again = NetworkSpec.from_dict(spec.to_dict())
        assert again.to_dict() == spec.to_dict()


class TestDefaultNetworkShapes:
    def test_minimum_frame_gives_512_channel_map_and_4608_features(self):
        net = Network(make_spec("default"), seed=0)
        frame = np.random.default_rng(0).random((3, 75, 80)).astype(np.float32)
        fm = net.forward_shared(frame)
        assert fm.shape[0] == 512
        feats = net.extract_features(fm, np.array([[0.5, 0.5, 2.5, 2.0]]))
        assert feats.shape == (1, 4608)
        logits = net.score_features(feats)
        assert logits.shape == (1, 2)

    def test_wrong_channel_count_rejected(self):
        net = Network(tiny_spec(), seed=0)
        with pytest.raises(ValueError, match="frame"):
            net.forward_shared(np.zeros((1, 40, 40)))


class TestSharedPassCounter:
    def test_counter_counts_frames_not_rois(self):
        net = Network(tiny_spec(), seed=1)
        frame = np.random.default_rng(1).random((3, 20, 20))
        fm = net.forward_shared(frame)
        for n in (2, 64, 256):
            rois = np.tile([0.5, 0.5, 3.5, 3.5], (n, 1))
            net.score_rois(fm, rois)
        assert net.conv_passes == 1
        net.forward_shared(frame)
        assert net.conv_passes == 2


class TestScoreRois:
    def test_identical_branches_give_identical_logits(self):
        net = Network(tiny_spec(k=2), seed=2)
        b0, b1 = net.branches
        b1.weight.value[...] = b0.weight.value
        b1.bias.value[...] = b0.bias.value
        fm = net.forward_shared(np.random.default_rng(2).random((3, 24, 24)))
        rois = np.array([[0.0, 0.0, 3.0, 3.0], [1.0, 1.0, 4.0, 4.0]])
        la = net.score_rois(fm, rois, branch=0)
        lb = net.score_rois(fm, rois, branch=1)
        assert np.array_equal(la, lb)

    def test_empty_roi_list_gives_empty_result(self):
        net = Network(tiny_spec(), seed=3)
        fm = net.forward_shared(np.zeros((3, 20, 20)))
        assert net.score_rois(fm, np.zeros((0, 4))).shape == (0, 2)

    def test_unselected_branch_gradients_stay_zero(self):
        net = Network(tiny_spec(k=3), seed=4)
        fm = net.forward_shared(np.random.default_rng(4).random((3, 20, 20)))
        logits = net.score_rois(fm, np.array([[0.0, 0.0, 3.0, 3.0]]), branch=1)
        _, grad = softmax_cross_entropy(logits, [1])
        net.backward_scores(grad, into_trunk=True)
        for j in (0, 2):
            for p in net.branch_params(j):
                assert np.all(p.grad == 0.0)
        assert any(np.any(p.grad != 0.0) for p in net.branch_params(1))
        assert any(np.any(p.grad != 0.0) for p in net.trunk_params())

    def test_bad_branch_index_rejected(self):
        net = Network(tiny_spec(k=2), seed=5)
        fm = net.forward_shared(np.zeros((3, 20, 20)))
        with pytest.raises(ValueError, match="branch"):
            net.score_rois(fm, np.array([[0.0, 0.0, 3.0, 3.0]]), branch=2)


class TestPipelineGradients:
    def _loss(self, net, frame, rois, labels):
        fm = net.forward_shared(frame)
        logits = net.score_rois(fm, rois, branch=0, mode="infer")
        return softmax_cross_entropy(logits, labels)

    def test_fc_path_matches_finite_differences(self):
        net = Network(tiny_spec(), seed=6, dtype=np.float64)
        rng = np.random.default_rng(6)
        frame = rng.random((3, 22, 22))
        rois = np.array([[0.3, 0.4, 3.1, 3.3], [1.2, 0.8, 4.0, 3.6]])
        labels = [1, 0]

        def loss():
            return self._loss(net, frame, rois, labels)[0]

        _, grad = self._loss(net, frame, rois, labels)
        net.backward_scores(grad, into_trunk=False)
        checked = {"fc4.weight", "fc4.bias", "head0.weight", "head0.bias"}
        for name, p in net.named_params().items():
            if name in checked:
                assert rel_err(p.grad, numgrad(loss, p.value)) < 1e-4, name
                p.zero_grad()

    def test_trunk_path_matches_finite_differences(self):
        net = Network(tiny_spec(), seed=7, dtype=np.float64)
        rng = np.random.default_rng(7)
        frame = rng.random((3, 16, 16))
        rois = np.array([[0.3, 0.4, 2.6, 2.8]])
        labels = [1]

        def loss():
            return self._loss(net, frame, rois, labels)[0]

        _, grad = self._loss(net, frame, rois, labels)
        net.backward_scores(grad, into_trunk=True)
        for name in ("conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"):
            p = net.named_params()[name]
            assert rel_err(p.grad, numgrad(loss, p.value)) < 1e-4, name


class TestSwapHead:
    def test_shared_layers_bit_identical_after_swap(self):
        net = Network(tiny_spec(k=10), seed=8)
        before = {n: p.value.copy() for n, p in net.named_params().items()
                  if not n.startswith("head")}
        net.swap_head(1, rng=np.random.default_rng(0))
        assert net.spec.head_branches == 1
        assert len(net.branches) == 1
        assert net.branches[0].weight.shape == (2, net.spec.head_in_dim())
        for n, v in before.items():
            assert net.named_params()[n].value.tobytes() == v.tobytes()

    def test_swap_is_deterministic_for_fixed_seed(self):
        w = []
        for _ in range(2):
            net = Network(tiny_spec(k=3), seed=9)
            net.swap_head(1, rng=np.random.default_rng(123))
            w.append(net.branches[0].weight.value.copy())
        assert np.array_equal(w[0], w[1])

    def test_new_head_bias_zero_and_k_validated(self):
        net = Network(tiny_spec(k=2), seed=10)
        net.swap_head(4, init_std=0.02, rng=np.random.default_rng(3))
        assert len(net.branches) == 4
        assert all(np.all(b.bias.value == 0) for b in net.branches)
        with pytest.raises(ValueError, match=">= 1"):
            net.swap_head(0)


class TestCheckpoints:
    def test_save_load_save_is_byte_identical(self, tmp_path):
        net = Network(tiny_spec(k=2), seed=11)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(net, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_network_scores_identically(self, tmp_path):
        net = Network(tiny_spec(), seed=12)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        other = load_checkpoint(path)
        frame = np.random.default_rng(12).random((3, 20, 20)).astype(np.float32)
        rois = np.array([[0.0, 0.0, 3.0, 3.0]])
        a = net.score_rois(net.forward_shared(frame), rois)
        b = other.score_rois(other.forward_shared(frame), rois)
        assert np.array_equal(a, b)

    def test_missing_tensor_error_names_it(self, tmp_path):
        net = Network(tiny_spec(), seed=13)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        spec, tensors = read_checkpoint(path)
        del tensors["fc4.bias"]
        _write_raw(tmp_path / "cut.ckpt", spec, tensors)
        with pytest.raises(CheckpointError, match="missing tensor fc4.bias"):
            load_checkpoint(tmp_path / "cut.ckpt")

    def test_shape_mismatch_is_distinct_error(self, tmp_path):
        small = Network(tiny_spec(fc_out=4), seed=14)
        path = tmp_path / "small.ckpt"
        save_checkpoint(small, path)
        with pytest.raises(CheckpointError, match="shape mismatch for fc4.weight"):
            load_checkpoint(path, spec=tiny_spec(fc_out=8))

    def test_variant_mismatch_rejected(self, tmp_path):
        conv5 = Network(make_spec("conv5"), seed=0)
        path = tmp_path / "conv5.ckpt"
        save_checkpoint(conv5, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, spec=make_spec("default"))

    def test_version_and_magic_errors(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(bad)
        net = Network(tiny_spec(), seed=15)
        good = tmp_path / "good.ckpt"
        save_checkpoint(net, good)
        blob = bytearray(good.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        (tmp_path / "ver.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "ver.ckpt")


def _write_raw(path, spec, tensors):
    import json
    import struct
    with open(path, "wb") as fh:
        fh.write(b"DTRK")
        fh.write(struct.pack("<I", 1))
        blob = json.dumps(spec.to_dict(), sort_keys=True).encode()
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def test_reinit_fc_stack_keeps_conv_weights():
    net = Network(tiny_spec(), seed=16)
    conv_before = net.trunk_layers[0][1].weight.value.copy()
    fc_before = net.fc_layers[0][1].weight.value.copy()
    reinit_fc_stack(net, np.random.default_rng(0))
    assert np.array_equal(net.trunk_layers[0][1].weight.value, conv_before)
    assert not np.array_equal(net.fc_layers[0][1].weight.value, fc_before)


class TestInteriorRoiConsistency:
    def test_shared_map_equals_cropped_receptive_field(self):
        """A RoI whose conv3 receptive field (with the pad-free margin cell)
        lies inside the frame scores identically from the shared map and from
        a trunk pass over just that cropped region."""
        net = Network(make_spec("default"), seed=17, dtype=np.float64)
        rng = np.random.default_rng(17)
        frame = rng.random((3, 139, 139))
        a, b = 2, 4  # feature-map cells of interest
        fm_full = net.forward_shared(frame)
        # receptive field of cells a..b plus one pad margin cell each side
        lo, hi = 16 * a - 16, 16 * b + 58
        crop = frame[:, lo:hi + 1, lo:hi + 1]
        fm_crop = net.forward_shared(crop)
        d = b - a
        assert fm_crop.shape[1] == d + 3
        inner = fm_crop[:, 1:d + 2, 1:d + 2]
        assert rel_err(inner, fm_full[:, a:b + 1, a:b + 1]) < 1e-9
        roi = np.array([[2.2, 2.3, 3.8, 3.9]])
        roi_crop = roi - (a - 1)
        logits_full = net.score_rois(fm_full, roi)
        logits_crop = net.score_rois(fm_crop, roi_crop)
        assert rel_err(logits_full, logits_crop) < 1e-5
