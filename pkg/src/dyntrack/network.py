"""Network assembly: shared conv trunk, RoI layer, FC trunk, k-branch head.

The trunk runs once per frame on the whole image; every candidate box is then
scored from the shared feature map through the RoI layer and the FC stack.
Exactly one head branch takes part in any forward/backward pass, so training
against branch i can never touch branch j.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .nn import FC, LRN, Conv2D, Dropout, MaxPool2D, ReLU
from .roi import (roialign_backward, roialign_forward, roipool_backward,
                  roipool_forward)

CHECKPOINT_MAGIC = b"DTRK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class LayerConfig:
    kind: str
    params: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.params.get(key, default)


_VALID_KINDS = {"conv", "relu", "lrn", "maxpool", "fc", "dropout"}


def validate_layer(cfg):
    if cfg.kind not in _VALID_KINDS:
        raise ValueError(f"unknown layer kind '{cfg.kind}'")
    p = cfg.params
    if cfg.kind == "conv":
        if p["stride"] < 1:
            raise ValueError(f"conv stride must be >= 1, got {p['stride']}")
        if p["pad"] < 0:
            raise ValueError(f"conv pad must be >= 0, got {p['pad']}")
        if min(p["in_channels"], p["out_channels"], p["ksize"]) < 1:
            raise ValueError("conv channel/kernel counts must be >= 1")
    elif cfg.kind == "maxpool":
        if p["stride"] < 1 or p["ksize"] < 1:
            raise ValueError("maxpool kernel and stride must be >= 1")
    elif cfg.kind == "lrn":
        if p["n"] < 1 or p["n"] % 2 == 0:
            raise ValueError(f"lrn window must be odd and >= 1, got {p['n']}")
        if p["k"] <= 0:
            raise ValueError("lrn k must be > 0")
    elif cfg.kind == "fc":
        if min(p["in_dim"], p["out_dim"]) < 1:
            raise ValueError("fc dimensions must be >= 1")
    elif cfg.kind == "dropout":
        if not 0.0 <= p["rate"] < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p['rate']}")


@dataclass
class NetworkSpec:
    """Ordered layer configs for the conv trunk and FC trunk, the RoI layer
    choice, and the branch count of the domain head."""

    trunk: list
    fc_trunk: list
    head_branches: int = 1
    roi_kind: str = "align"
    roi_size: tuple = (3, 3)
    roi_samples: tuple = (2, 2)
    head_init_std: float = 0.01

    def validate(self):
        if self.head_branches < 1:
            raise ValueError(f"head needs >= 1 branches, got {self.head_branches}")
        if self.roi_kind not in ("align", "pool"):
            raise ValueError(f"roi kind must be align or pool, got '{self.roi_kind}'")
        for cfg in self.trunk:
            if cfg.kind in ("fc", "dropout"):
                raise ValueError(f"'{cfg.kind}' layer not allowed in the conv trunk")
            validate_layer(cfg)
        for cfg in self.fc_trunk:
            if cfg.kind not in ("fc", "relu", "dropout"):
                raise ValueError(f"'{cfg.kind}' layer not allowed in the FC trunk")
            validate_layer(cfg)
        convs = [c for c in self.trunk if c.kind == "conv"]
        if not convs:
            raise ValueError("conv trunk needs at least one conv layer")
        fcs = [c for c in self.fc_trunk if c.kind == "fc"]
        expected = self.trunk_out_channels() * self.roi_size[0] * self.roi_size[1]
        first_in = fcs[0].params["in_dim"] if fcs else expected
        if first_in != expected:
            raise ValueError(f"first fc in_dim {first_in} != pooled feature "
                             f"size {expected}")

    def trunk_out_channels(self):
        return [c for c in self.trunk if c.kind == "conv"][-1].params["out_channels"]

    def head_in_dim(self):
        fcs = [c for c in self.fc_trunk if c.kind == "fc"]
        if fcs:
            return fcs[-1].params["out_dim"]
        return self.trunk_out_channels() * self.roi_size[0] * self.roi_size[1]

    def feature_stride(self):
        s = 1
        for cfg in self.trunk:
            if cfg.kind in ("conv", "maxpool"):
                s *= cfg.params["stride"]
        return s

    def min_input_size(self, min_cells=3):
        """Smallest square input whose feature map has >= min_cells per axis."""
        n = min_cells
        for cfg in reversed(self.trunk):
            if cfg.kind == "conv":
                n = (n - 1) * cfg.params["stride"] + cfg.params["ksize"] \
                    - 2 * cfg.params["pad"]
            elif cfg.kind == "maxpool":
                n = (n - 1) * cfg.params["stride"] + cfg.params["ksize"]
        return n

    def to_dict(self):
        return {
            "trunk": [[c.kind, c.params] for c in self.trunk],
            "fc_trunk": [[c.kind, c.params] for c in self.fc_trunk],
            "head_branches": self.head_branches,
            "roi_kind": self.roi_kind,
            "roi_size": list(self.roi_size),
            "roi_samples": list(self.roi_samples),
            "head_init_std": self.head_init_std,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(trunk=[LayerConfig(k, p) for k, p in d["trunk"]],
                   fc_trunk=[LayerConfig(k, p) for k, p in d["fc_trunk"]],
                   head_branches=d["head_branches"],
                   roi_kind=d["roi_kind"],
                   roi_size=tuple(d["roi_size"]),
                   roi_samples=tuple(d["roi_samples"]),
                   head_init_std=d["head_init_std"])


def _conv(cin, cout, k, s, p):
    return LayerConfig("conv", dict(in_channels=cin, out_channels=cout,
                                    ksize=k, stride=s, pad=p))


_LRN_DEFAULTS = dict(n=5, k=2.0, alpha=5e-4, beta=0.75)

VARIANTS = ("default", "conv5", "fc2", "notrain")


def make_spec(variant="default", k=1, roi_kind="align"):
    """Build a NetworkSpec for the default trunk or one of its variants.

    default: 3 convs (96/256/512), RoI layer to 3x3x512, fc4+fc5+head.
    conv5:   two extra 3x3x512 convs before the RoI layer.
    fc2:     fc5 removed, fc4 connects straight to the head.
    notrain: same architecture as default (the difference is how its FC
             weights are initialized at tracking time, not the shape).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}' (want one of {VARIANTS})")
    trunk = [
        _conv(3, 96, 7, 2, 0), LayerConfig("relu"),
        LayerConfig("lrn", dict(_LRN_DEFAULTS)),
        LayerConfig("maxpool", dict(ksize=3, stride=2)),
        _conv(96, 256, 5, 2, 0), LayerConfig("relu"),
        LayerConfig("lrn", dict(_LRN_DEFAULTS)),
        LayerConfig("maxpool", dict(ksize=3, stride=2)),
        _conv(256, 512, 3, 1, 1), LayerConfig("relu"),
    ]
    if variant == "conv5":
        trunk += [_conv(512, 512, 3, 1, 1), LayerConfig("relu"),
                  _conv(512, 512, 3, 1, 1), LayerConfig("relu")]
    fc_trunk = [
        LayerConfig("fc", dict(in_dim=512 * 9, out_dim=512)), LayerConfig("relu"),
        LayerConfig("dropout", dict(rate=0.5)),
    ]
    if variant != "fc2":
        fc_trunk += [
            LayerConfig("fc", dict(in_dim=512, out_dim=512)), LayerConfig("relu"),
            LayerConfig("dropout", dict(rate=0.5)),
        ]
    return NetworkSpec(trunk=trunk, fc_trunk=fc_trunk, head_branches=k,
                       roi_kind=roi_kind)


def _build_layer(cfg, rng, dtype):
    p = cfg.params
    if cfg.kind == "conv":
        return Conv2D(p["in_channels"], p["out_channels"], p["ksize"],
                      p["stride"], p["pad"], rng=rng, dtype=dtype)
    if cfg.kind == "relu":
        return ReLU()
    if cfg.kind == "lrn":
        return LRN(p["n"], p["k"], p["alpha"], p["beta"])
    if cfg.kind == "maxpool":
        return MaxPool2D(p["ksize"], p["stride"])
    if cfg.kind == "fc":
        return FC(p["in_dim"], p["out_dim"], rng=rng, dtype=dtype)
    if cfg.kind == "dropout":
        return Dropout(p["rate"])
    raise ValueError(f"unknown layer kind '{cfg.kind}'")


class Network:
    """One assembled network instance. Single writer; see module docstring."""

    def __init__(self, spec, seed=0, dtype=np.float32):
        spec.validate()
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.trunk_layers = []
        conv_idx = 0
        for cfg in spec.trunk:
            layer = _build_layer(cfg, rng, dtype)
            if cfg.kind == "conv":
                conv_idx += 1
                self.trunk_layers.append((f"conv{conv_idx}", layer))
            else:
                self.trunk_layers.append((None, layer))
        self.fc_layers = []
        fc_idx = 3  # fc4/fc5 regardless of conv count, so variants share names
        for cfg in spec.fc_trunk:
            layer = _build_layer(cfg, rng, dtype)
            if cfg.kind == "fc":
                fc_idx += 1
                self.fc_layers.append((f"fc{fc_idx}", layer))
            else:
                self.fc_layers.append((None, layer))
        head_in = spec.head_in_dim()
        self.branches = [FC(head_in, 2, rng=rng, dtype=dtype,
                            init_std=spec.head_init_std)
                         for _ in range(spec.head_branches)]
        self.conv_passes = 0
        self._featmap_shape = None
        self._roi_cache = None
        self._active_branch = None

    # ---- parameter access -------------------------------------------------

    def named_params(self):
        out = {}
        for name, layer in self.trunk_layers + self.fc_layers:
            if name is not None:
                out[f"{name}.weight"] = layer.weight
                out[f"{name}.bias"] = layer.bias
        for i, br in enumerate(self.branches):
            out[f"head{i}.weight"] = br.weight
            out[f"head{i}.bias"] = br.bias
        return out

    def trunk_params(self):
        return [p for name, layer in self.trunk_layers if name
                for p in layer.params()]

    def fc_trunk_params(self):
        return [p for name, layer in self.fc_layers if name
                for p in layer.params()]

    def branch_params(self, i):
        return self.branches[i].params()

    def trunk_fingerprint(self):
        """SHA-256 over the raw bytes of every conv-trunk parameter."""
        digest = hashlib.sha256()
        for name, layer in self.trunk_layers:
            if name is not None:
                digest.update(np.ascontiguousarray(layer.weight.value).tobytes())
                digest.update(np.ascontiguousarray(layer.bias.value).tobytes())
        return digest.hexdigest()

    # ---- forward / backward ----------------------------------------------

    def forward_shared(self, frame):
        """One conv-trunk pass over the whole frame. Returns the (C, H, W)
        feature map and bumps the shared-pass counter."""
        x = np.asarray(frame, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.spec.trunk[0].params["in_channels"]:
            raise ValueError(f"expected (3, H, W) frame, got shape {frame.shape}")
        for _, layer in self.trunk_layers:
            x = layer.forward(x)
        self.conv_passes += 1
        self._featmap_shape = x.shape[1:]
        return x[0]

    def extract_features(self, featmap, rois):
        """RoI layer only: pooled features flattened to (n, C*oh*ow)."""
        rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
        if self.spec.roi_kind == "align":
            pooled, cache = roialign_forward(featmap, rois, self.spec.roi_size,
                                             self.spec.roi_samples)
        else:
            pooled, cache = roipool_forward(featmap, rois, self.spec.roi_size)
        self._roi_cache = cache
        self._pooled_shape = pooled.shape
        return pooled.reshape(pooled.shape[0], -1)

    def score_features(self, feats, branch=0, mode="infer", rng=None):
        """FC trunk + one head branch on already-pooled features."""
        if branch >= len(self.branches):
            raise ValueError(f"branch {branch} out of range "
                             f"(head has {len(self.branches)})")
        x = np.asarray(feats, dtype=self.dtype)
        train = mode == "train"
        for _, layer in self.fc_layers:
            if isinstance(layer, Dropout):
                x = layer.forward(x, train=train, rng=rng)
            else:
                x = layer.forward(x)
        self._active_branch = branch
        return self.branches[branch].forward(x)

    def score_rois(self, featmap, rois, branch=0, mode="infer", rng=None):
        """Pool every RoI from the shared map and score it: (n, 2) logits.
        Column 1 is the target class, column 0 the background class."""
        rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
        if rois.shape[0] == 0:
            return np.zeros((0, 2), dtype=self.dtype)
        feats = self.extract_features(featmap, rois)
        return self.score_features(feats, branch, mode, rng)

    def backward_scores(self, grad_logits, into_trunk=False):
        """Backprop from head logits. Accumulates gradients in the active
        branch and the FC trunk; with into_trunk also through the RoI layer
        and the conv trunk. Returns grad w.r.t. pooled features."""
        g = self.branches[self._active_branch].backward(
            np.asarray(grad_logits, dtype=self.dtype))
        for _, layer in reversed(self.fc_layers):
            g = layer.backward(g)
        if not into_trunk:
            return g
        grad_pooled = g.reshape(self._pooled_shape)
        if self.spec.roi_kind == "align":
            grad_fm = roialign_backward(grad_pooled, self._roi_cache)
        else:
            grad_fm = roipool_backward(grad_pooled, self._roi_cache)
        gx = grad_fm[None].astype(self.dtype)
        for _, layer in reversed(self.trunk_layers):
            gx = layer.backward(gx)
        return g

    # ---- head management ---------------------------------------------------

    def swap_head(self, new_k, init_std=None, rng=None):
        """Discard all head branches and attach new_k fresh ones (Gaussian
        weights, zero bias). Every other parameter is left untouched."""
        if new_k < 1:
            raise ValueError(f"head needs >= 1 branches, got {new_k}")
        if init_std is None:
            init_std = self.spec.head_init_std
        rng = rng if rng is not None else np.random.default_rng(0)
        head_in = self.spec.head_in_dim()
        self.branches = [FC(head_in, 2, rng=rng, dtype=self.dtype,
                            init_std=init_std) for _ in range(new_k)]
        self.spec.head_branches = new_k
        return self


def reinit_fc_stack(net, rng):
    """Re-initialize the FC trunk in place (conv weights untouched); used by
    the no-offline-training variant."""
    for name, layer in net.fc_layers:
        if name is not None:
            layer.weight.value[...] = (
                rng.standard_normal(layer.weight.shape) * 0.01).astype(net.dtype)
            layer.bias.value[...] = 0.0


# ---- checkpoint file format -------------------------------------------------
# little-endian binary:
#   magic "DTRK" | u32 version | u32 spec_len | spec JSON (utf-8)
#   | u32 tensor_count | per tensor:
#       u16 name_len | name (utf-8) | u8 rank | u32 dims... | f32 raw values


def save_checkpoint(net, path):
    params = net.named_params()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        spec_blob = json.dumps(net.spec.to_dict(), sort_keys=True).encode()
        fh.write(struct.pack("<I", len(spec_blob)))
        fh.write(spec_blob)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            blob = name.encode()
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            arr = np.ascontiguousarray(p.value, dtype="<f4")
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def read_checkpoint(path):
    """Raw read: (spec, {name: float32 array})."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version "
                                  f"{version} (expected {CHECKPOINT_VERSION})")
        (spec_len,) = struct.unpack("<I", fh.read(4))
        spec = NetworkSpec.from_dict(json.loads(fh.read(spec_len).decode()))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            tensors[name] = np.frombuffer(fh.read(4 * n),
                                          dtype="<f4").reshape(dims)
        return spec, tensors


def load_checkpoint(path, spec=None, dtype=np.float32):
    """Rebuild a Network from a checkpoint. When a spec is given, the file's
    tensors must cover it exactly (missing tensors and shape mismatches are
    distinct errors)."""
    file_spec, tensors = read_checkpoint(path)
    spec = spec if spec is not None else file_spec
    net = Network(spec, seed=0, dtype=dtype)
    params = net.named_params()
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if tensors[name].shape != p.value.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: file {tensors[name].shape} "
                f"vs spec {p.value.shape}")
        p.value[...] = tensors[name].astype(dtype)
    extra = set(tensors) - set(params)
    if extra:
        raise CheckpointError(f"{path}: unexpected tensors {sorted(extra)}")
    return net
