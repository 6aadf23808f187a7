"""MassNet: deep-feature branch, joint branch, projection head and regressor."""

from __future__ import annotations

import dataclasses
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, ConfigError, NumericError, ShapeError

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Widths default to values whose trainable-parameter count spans the
    1.80M-3.47M band for 4-8 sensing layers.
    """

    n_sensing_layers: int = 4
    stem_channels: int = 32
    trunk_channels: int = 128
    bottleneck_ratio: float = 2.0
    deep_feature_dim: int = 128
    joint_feature_dim: int = 128
    joint_hidden: tuple = (64, 128)
    embedding_dim: int = 128
    cbam_reduction: int = 16
    cbam_spatial_kernel: int = 7
    joint_count: int = 14
    use_joint_branch: bool = True
    use_mass_branch: bool = True
    leaky_slope: float = 0.01
    stem_stride: int = 2
    input_rows: int = 192
    input_cols: int = 192
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.joint_hidden = tuple(int(h) for h in self.joint_hidden)
        if not 0 <= self.n_sensing_layers <= 12:
            raise ConfigError(f"n_sensing_layers must lie in [0, 12], got {self.n_sensing_layers}")
        dims = (self.stem_channels, self.trunk_channels, self.deep_feature_dim, self.joint_feature_dim,
                self.embedding_dim, self.cbam_reduction, self.joint_count, self.stem_stride,
                self.input_rows, self.input_cols, *self.joint_hidden)
        if any(d <= 0 for d in dims):
            raise ConfigError("all model dimensions must be positive")
        if self.cbam_spatial_kernel % 2 == 0:
            raise ConfigError("cbam_spatial_kernel must be odd")
        if self.trunk_channels % self.bottleneck_ratio:
            raise ConfigError(f"trunk_channels {self.trunk_channels} not divisible by "
                              f"bottleneck_ratio {self.bottleneck_ratio}")
        if self.n_sensing_layers and self.trunk_channels < self.cbam_reduction:
            raise ConfigError("trunk_channels must be >= cbam_reduction")
        if not (self.use_joint_branch or self.use_mass_branch):
            raise ConfigError("at least one branch must be enabled")

    @property
    def inner_channels(self) -> int:
        return int(self.trunk_channels // self.bottleneck_ratio)

    @property
    def regressor_inputs(self) -> int:
        return self.deep_feature_dim * self.use_mass_branch + self.joint_feature_dim * self.use_joint_branch

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["joint_hidden"] = list(self.joint_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _bn(channels, cfg):
    return nn.BatchNorm2d(channels, momentum=cfg.bn_momentum)


class TriConv(nn.Module):
    """Parallel 1x1, 3x3 and 5x5 same-padded convolutions, summed, then BN.

    No activation follows the normalisation.
    """

    def __init__(self, c_in, c_out, momentum=0.1):
        super().__init__()
        self.c_in = c_in
        self.branch1 = nn.Conv2d(c_in, c_out, 1, bias=False)
        self.branch3 = nn.Conv2d(c_in, c_out, 3, padding=1, bias=False)
        self.branch5 = nn.Conv2d(c_in, c_out, 5, padding=2, bias=False)
        self.bn = nn.BatchNorm2d(c_out, momentum=momentum)

    def branch_sum(self, x):
        if x.shape[-3] != self.c_in:
            raise ShapeError(f"TriConv expects {self.c_in} input channels, got {x.shape[-3]}")
        return self.branch1(x) + self.branch3(x) + self.branch5(x)

    def forward(self, x):
        return self.bn(self.branch_sum(x))


class SensingBlock(nn.Module):
    """1x1 reduce -> TriConv -> 1x1 expand, plus an identity shortcut."""

    def __init__(self, channels, inner, slope=0.01, momentum=0.1):
        super().__init__()
        self.reduce = nn.Conv2d(channels, inner, 1, bias=False)
        self.reduce_bn = nn.BatchNorm2d(inner, momentum=momentum)
        self.act = nn.LeakyReLU(slope)
        self.triconv = TriConv(inner, inner, momentum)
        self.expand = nn.Conv2d(inner, channels, 1, bias=False)
        self.expand_bn = nn.BatchNorm2d(channels, momentum=momentum)

    def forward(self, x):
        y = self.act(self.reduce_bn(self.reduce(x)))
        y = self.triconv(y)
        y = self.expand_bn(self.expand(y))
        return x + y


class CBAM(nn.Module):
    """Channel attention then spatial attention, both sigmoid-gated."""

    def __init__(self, channels, reduction=16, spatial_kernel=7):
        super().__init__()
        if channels < reduction:
            raise ConfigError(f"CBAM needs channels >= reduction, got {channels} < {reduction}")
        hidden = channels // reduction
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden, bias=False),
            nn.ReLU(),
            nn.Linear(hidden, channels, bias=False),
        )
        self.spatial = nn.Conv2d(2, 1, spatial_kernel, padding=spatial_kernel // 2, bias=False)

    def channel_gate(self, x):
        avg = self.mlp(x.mean(dim=(2, 3)))
        mx = self.mlp(x.amax(dim=(2, 3)))
        return torch.sigmoid(avg + mx)[:, :, None, None]

    def spatial_gate(self, x):
        desc = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.spatial(desc))

    def forward(self, x):
        x = x * self.channel_gate(x)
        return x * self.spatial_gate(x)


class SensingLayer(nn.Module):
    """Two sensing blocks and CBAM with a layer-level shortcut."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c, inner = cfg.trunk_channels, cfg.inner_channels
        self.block1 = SensingBlock(c, inner, cfg.leaky_slope, cfg.bn_momentum)
        self.block2 = SensingBlock(c, inner, cfg.leaky_slope, cfg.bn_momentum)
        self.cbam = CBAM(c, cfg.cbam_reduction, cfg.cbam_spatial_kernel)

    def forward(self, x):
        return x + self.cbam(self.block2(self.block1(x)))


class DeepFeatureExtractor(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        s = cfg.stem_stride
        self.stem = nn.Sequential(
            nn.Conv2d(1, cfg.stem_channels, 3, stride=s, padding=1, bias=False),
            _bn(cfg.stem_channels, cfg),
            nn.LeakyReLU(cfg.leaky_slope),
            nn.Conv2d(cfg.stem_channels, cfg.trunk_channels, 3, stride=s, padding=1, bias=False),
            _bn(cfg.trunk_channels, cfg),
            nn.LeakyReLU(cfg.leaky_slope),
        )
        self.layers = nn.ModuleList(SensingLayer(cfg) for _ in range(cfg.n_sensing_layers))
        self.head = TriConv(cfg.trunk_channels, cfg.deep_feature_dim, cfg.bn_momentum)

    def stages(self):
        yield "stem", self.stem
        for i, layer in enumerate(self.layers):
            yield f"layers.{i}", layer
        yield "head", self.head

    def forward(self, x, check_finite=False):
        if x.shape[-3:] != (1, self.cfg.input_rows, self.cfg.input_cols):
            raise ShapeError(f"expected input (B, 1, {self.cfg.input_rows}, {self.cfg.input_cols}), "
                             f"got {tuple(x.shape)}")
        for name, stage in self.stages():
            x = stage(x)
            if check_finite:
                _assert_finite(x, f"deep.{name}")
        return x.mean(dim=(2, 3))


class JointEncoder(nn.Module):
    """Three fully-connected layers mapping 2J coordinates to a feature vector."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h1, h2 = cfg.joint_hidden
        self.n_in = 2 * cfg.joint_count
        self.net = nn.Sequential(
            nn.Linear(self.n_in, h1),
            nn.LeakyReLU(cfg.leaky_slope),
            nn.Linear(h1, h2),
            nn.LeakyReLU(cfg.leaky_slope),
            nn.Linear(h2, cfg.joint_feature_dim),
        )

    def forward(self, j):
        if j.shape[-1] != self.n_in:
            raise ShapeError(f"joint vector must have length {self.n_in}, got {j.shape[-1]}")
        return self.net(j)


class ProjectionHead(nn.Module):
    """Two-layer MLP followed by L2 normalisation."""

    eps = 1e-12

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.deep_feature_dim
        self.net = nn.Sequential(nn.Linear(d, d), nn.LeakyReLU(cfg.leaky_slope), nn.Linear(d, cfg.embedding_dim))

    def forward(self, f):
        z = self.net(f)
        return z / (z.norm(dim=-1, keepdim=True) + self.eps)


class MassNet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.deep = DeepFeatureExtractor(cfg) if cfg.use_mass_branch else None
        self.projection = ProjectionHead(cfg) if cfg.use_mass_branch else None
        self.joint = JointEncoder(cfg) if cfg.use_joint_branch else None
        self.regressor = nn.Linear(cfg.regressor_inputs, 1)
        # fixed output affine map, kg = mean + scale * regressor(...); set from training labels
        self.register_buffer("target_mean", torch.zeros(()))
        self.register_buffer("target_scale", torch.ones(()))
        self.check_finite = True

    def set_target_scaling(self, mean: float, scale: float):
        if not scale > 0:
            raise ValueError(f"target scale must be positive, got {scale}")
        self.target_mean.fill_(float(mean))
        self.target_scale.fill_(float(scale))

    def forward(self, frames, joints=None, with_embedding=False):
        """Return predicted weights (B,) and, if asked, the embeddings (B, E)."""
        parts = []
        embedding = None
        check = self.check_finite
        if self.deep is not None:
            feats = self.deep(frames, check_finite=check)
            parts.append(feats)
            if with_embedding:
                embedding = self.projection(feats)
                if check:
                    _assert_finite(embedding, "projection")
        if self.joint is not None:
            if joints is None:
                joints = frames.new_zeros(frames.shape[0], 2 * self.cfg.joint_count)
            jf = self.joint(joints)
            if check:
                _assert_finite(jf, "joint")
            parts.append(jf)
        pred = self.target_mean + self.target_scale * self.regressor(torch.cat(parts, dim=1)).squeeze(-1)
        if check:
            _assert_finite(pred, "regressor")
        return (pred, embedding) if with_embedding else pred


def _assert_finite(t, where):
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in forward pass after {where}")


def build_model(cfg: ModelConfig | None = None, seed: int | None = None, dtype=torch.float32) -> MassNet:
    if seed is not None:
        torch.manual_seed(seed)
    return MassNet(cfg).to(dtype)


# ---------------------------------------------------------------------------
# functional entry points
# ---------------------------------------------------------------------------

def triconv_forward(x, params: TriConv):
    return params(x)


def sensing_block_forward(x, params: SensingBlock):
    return params(x)


def cbam_forward(x, params: CBAM):
    return params(x)


def sensing_layer_forward(x, params: SensingLayer):
    return params(x)


def extract_deep_features(frame_tensor, params: MassNet):
    return params.deep(frame_tensor, check_finite=params.check_finite)


def extract_joint_features(joint_vector, params: MassNet):
    return params.joint(joint_vector)


def project_embedding(features, params: MassNet):
    return params.projection(features)


def predict_weight(frame_tensor, joint_vector, params: MassNet):
    """Inference-mode prediction for a batch (or a single un-batched input)."""
    frames = torch.as_tensor(frame_tensor)
    single = frames.dim() == 3
    if single:
        frames = frames[None]
    dtype = next(params.parameters()).dtype
    frames = frames.to(dtype)
    joints = None
    if joint_vector is not None:
        joints = torch.as_tensor(joint_vector).to(dtype)
        if joints.dim() == 1:
            joints = joints[None]
    was_training = params.training
    params.eval()
    try:
        with torch.no_grad():
            out = params(frames, joints)
    finally:
        params.train(was_training)
    return out[0] if single else out


def count_parameters(cfg_or_model) -> int:
    model = cfg_or_model if isinstance(cfg_or_model, nn.Module) else MassNet(cfg_or_model)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: MassNet, path, extra: dict | None = None) -> Path:
    """Write config, parameters and BN statistics to an ``.npz`` container.

    ``extra`` is stored as JSON next to the config (e.g. preprocessing
    settings and the dataset normaliser).
    """
    path = Path(path)
    meta = {"format_version": CHECKPOINT_VERSION, "config": model.cfg.to_dict(), "extra": extra or {}}
    arrays = {f"state/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(model, extra)``; raises CheckpointError on any defect."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        meta = json.loads(arrays.pop("meta").tobytes().decode())
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} has no readable metadata") from exc
    found = meta.get("format_version")
    if found != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint {path}: expected format version {CHECKPOINT_VERSION}, found {found}")
    model = MassNet(ModelConfig.from_dict(meta["config"]))
    state = {k[len("state/"):]: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    floats = [v.dtype for v in state.values() if v.dtype.is_floating_point]
    if floats:
        model = model.to(floats[0])
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {path} does not match its config: {exc}") from exc
    model.eval()
    return model, meta.get("extra", {})
