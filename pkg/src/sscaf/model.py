"""Model architectures: the dual-branch cross-attention network, its
single-branch ablations, and the DNN / CNN / CNN-Transformer baselines.

All models share the same contract: ``forward_batch(mel, rms, train)``
maps (B, 480, 64) log-Mel and (B, 480) RMS inputs to 24 per-source
probabilities and one raw annoyance scalar per clip.  The annoyance head
is unbounded during training; reports clamp it to [1, 10] via
``clamp_rating``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeError
from .features import FeaturePair, N_FRAMES, N_MELS

MODEL_KINDS = ("dcnn-caf", "mel-only", "rms-only", "dnn", "cnn", "cnn-transformer")
TINY_SCALE = 16
RATING_MIN, RATING_MAX = 1.0, 10.0


def clamp_rating(value):
    """Reporting-time clamp of the annoyance head output to [1, 10]."""
    return float(np.clip(value, RATING_MIN, RATING_MAX))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; ``tiny`` divides all widths by 16."""

    conv_filters: tuple = (64, 128, 256, 512)
    n_mels: int = N_MELS
    n_frames: int = N_FRAMES
    d_model: int = 512
    heads: int = 8
    n_classes: int = 24
    embedding_dim: int = 128
    fusion_dim: int = 512
    tiny: bool = False
    dnn_widths: tuple = (64, 128, 256, 512)
    cnn_filters: tuple = (32, 64)
    encoder_heads: int = 4

    def _scale(self, v):
        if not self.tiny:
            return v
        if isinstance(v, tuple):
            return tuple(max(1, w // TINY_SCALE) for w in v)
        return max(1, v // TINY_SCALE)

    @property
    def eff_conv_filters(self):
        return self._scale(self.conv_filters)

    @property
    def eff_d_model(self):
        return self._scale(self.d_model)

    @property
    def eff_embedding_dim(self):
        return self._scale(self.embedding_dim)

    @property
    def eff_fusion_dim(self):
        return self._scale(self.fusion_dim)

    @property
    def eff_dnn_widths(self):
        return self._scale(self.dnn_widths)

    @property
    def eff_cnn_filters(self):
        return self._scale(self.cnn_filters)

    @property
    def n_blocks(self):
        return len(self.conv_filters)

    @property
    def time_steps(self):
        return self.n_frames // (2 ** self.n_blocks)

    def validate(self):
        if self.eff_d_model % self.heads:
            raise ConfigError(
                f"d_model {self.eff_d_model} not divisible by {self.heads} heads"
            )
        if self.eff_conv_filters[-1] != self.eff_d_model:
            raise ConfigError(
                f"last conv width {self.eff_conv_filters[-1]} must equal "
                f"d_model {self.eff_d_model}"
            )
        if self.n_frames % (2 ** self.n_blocks):
            raise ConfigError(
                f"n_frames {self.n_frames} not divisible by 2^{self.n_blocks}"
            )
        return self

    # -- checkpoint header (de)serialization ---------------------------
    def to_kv(self):
        return {
            "conv_filters": ",".join(map(str, self.conv_filters)),
            "n_mels": str(self.n_mels),
            "n_frames": str(self.n_frames),
            "d_model": str(self.d_model),
            "heads": str(self.heads),
            "n_classes": str(self.n_classes),
            "embedding_dim": str(self.embedding_dim),
            "fusion_dim": str(self.fusion_dim),
            "tiny": "1" if self.tiny else "0",
            "dnn_widths": ",".join(map(str, self.dnn_widths)),
            "cnn_filters": ",".join(map(str, self.cnn_filters)),
            "encoder_heads": str(self.encoder_heads),
        }

    @classmethod
    def from_kv(cls, kv):
        return cls(
            conv_filters=tuple(int(v) for v in kv["conv_filters"].split(",")),
            n_mels=int(kv["n_mels"]),
            n_frames=int(kv["n_frames"]),
            d_model=int(kv["d_model"]),
            heads=int(kv["heads"]),
            n_classes=int(kv["n_classes"]),
            embedding_dim=int(kv["embedding_dim"]),
            fusion_dim=int(kv["fusion_dim"]),
            tiny=kv["tiny"] == "1",
            dnn_widths=tuple(int(v) for v in kv["dnn_widths"].split(",")),
            cnn_filters=tuple(int(v) for v in kv["cnn_filters"].split(",")),
            encoder_heads=int(kv.get("encoder_heads", "4")),
        ).validate()


@dataclass
class Prediction:
    """Single-clip inference result.

    ``annoyance`` is the raw head output; ``attention_maps`` (when
    requested) stacks the two fusion attentions as (2, heads, T, T).
    """

    source_probs: np.ndarray
    annoyance: float
    attention_maps: np.ndarray | None = None


def _named(prefix, layer):
    return [(f"{prefix}.{n}", p) for n, p in layer.parameters()]


def _named_buffers(prefix, layer):
    return [(f"{prefix}.{n}", b) for n, b in layer.buffers()]


class _ConvBranch:
    """Four conv blocks reducing (B, T, W, 1) to (B, T/16, d_model)."""

    def __init__(self, filters, rng, dtype):
        self.blocks = []
        c_in = 1
        for c_out in filters:
            self.blocks.append(ag.ConvBlock(c_in, c_out, rng, dtype))
            c_in = c_out

    def __call__(self, x, train):
        for block in self.blocks:
            x = block(x, train)
        # collapse the frequency axis, keep time
        return x.mean(axis=2)

    def parameters(self):
        out = []
        for i, block in enumerate(self.blocks):
            out.extend(_named(f"block{i + 1}", block))
        return out

    def buffers(self):
        out = []
        for i, block in enumerate(self.blocks):
            out.extend(_named_buffers(f"block{i + 1}", block))
        return out


class _ModelBase:
    kind = "base"

    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        self._sections = []  # (prefix, layer-like with parameters()/buffers())

    def _register(self, prefix, layer):
        self._sections.append((prefix, layer))
        return layer

    def parameters(self):
        out = []
        for prefix, layer in self._sections:
            out.extend(_named(prefix, layer))
        return out

    def buffers(self):
        out = []
        for prefix, layer in self._sections:
            out.extend(_named_buffers(prefix, layer))
        return out

    def state_tensors(self):
        """Parameters plus buffers, in a stable order, as arrays."""
        out = [(name, p.data) for name, p in self.parameters()]
        out.extend((f"buffer.{name}", b) for name, b in self.buffers())
        return out

    def load_state(self, named_arrays):
        from .errors import CheckpointError

        table = dict(named_arrays)
        for name, p in self.parameters():
            if name not in table:
                raise CheckpointError(f"checkpoint missing parameter '{name}'")
            arr = table.pop(name)
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(
                    f"parameter '{name}': checkpoint shape {arr.shape} != model {p.shape}"
                )
            p.data = arr.astype(p.dtype)
        for name, b in self.buffers():
            key = f"buffer.{name}"
            if key not in table:
                raise CheckpointError(f"checkpoint missing buffer '{name}'")
            arr = table.pop(key)
            if tuple(arr.shape) != tuple(b.shape):
                raise CheckpointError(
                    f"buffer '{name}': checkpoint shape {arr.shape} != model {b.shape}"
                )
            b[...] = arr.astype(b.dtype)
        if table:
            raise CheckpointError(f"checkpoint has extra tensors: {sorted(table)}")

    def parameter_count(self):
        return int(sum(p.size for _, p in self.parameters()))

    def _check_inputs(self, mel, rms):
        cfg = self.config
        if mel.ndim != 3 or mel.shape[1:] != (cfg.n_frames, cfg.n_mels):
            raise ShapeError(
                f"mel batch must be (B, {cfg.n_frames}, {cfg.n_mels}), got {mel.shape}"
            )
        if rms.ndim != 2 or rms.shape[1] != cfg.n_frames or rms.shape[0] != mel.shape[0]:
            raise ShapeError(
                f"rms batch must be ({mel.shape[0]}, {cfg.n_frames}), got {rms.shape}"
            )

    def predict(self, features: FeaturePair, attention=False) -> Prediction:
        """Deterministic single-clip inference (running BN statistics)."""
        mel = features.mel[None].astype(self._dtype)
        rms = features.rms[None].astype(self._dtype)
        probs, annoy = self.forward_batch(mel, rms, train=False)
        maps = self.attention_maps() if attention else None
        if maps is not None:
            maps = maps[:, 0]  # drop the batch axis
        return Prediction(
            source_probs=probs.data[0].copy(),
            annoyance=float(annoy.data[0]),
            attention_maps=maps,
        )

    def attention_maps(self):
        return None


class DcnnCafModel(_ModelBase):
    """Dual-branch conv net with two cross-attention fusion blocks.

    The Mel and RMS branches produce (B, T, d_model) representations;
    attention block 1 queries the Mel representation against the RMS one,
    block 2 the reverse.  Their outputs are concatenated and passed
    through the fusion layer for the annoyance head, while the source
    classifier reads the pooled Mel representation through an embedding
    layer.
    """

    kind = "dcnn-caf"

    def __init__(self, config: ModelConfig, rng_seed=0, dtype=np.float32):
        super().__init__(config)
        self._dtype = dtype
        rng = np.random.default_rng(rng_seed)
        cfg = self.config
        d = cfg.eff_d_model
        self.mel_branch = self._register("mel", _ConvBranch(cfg.eff_conv_filters, rng, dtype))
        self.rms_branch = self._register("rms", _ConvBranch(cfg.eff_conv_filters, rng, dtype))
        self.mha1 = self._register("mha1", ag.MultiHeadAttention(d, cfg.heads, rng, dtype))
        self.mha2 = self._register("mha2", ag.MultiHeadAttention(d, cfg.heads, rng, dtype))
        self.fusion = self._register("fusion", ag.Linear(2 * d, cfg.eff_fusion_dim, rng, dtype))
        self.arp_head = self._register("arp_head", ag.Linear(cfg.eff_fusion_dim, 1, rng, dtype))
        self.ssc_embed = self._register("ssc_embed", ag.Linear(d, cfg.eff_embedding_dim, rng, dtype))
        self.ssc_out = self._register("ssc_out", ag.Linear(cfg.eff_embedding_dim, cfg.n_classes, rng, dtype))
        self.shape_ledger()  # assert the architecture arithmetic at build time

    def shape_ledger(self):
        """Expected intermediate shapes; raises if the config breaks them."""
        cfg = self.config
        t = cfg.n_frames
        ledger = {"input_mel": (cfg.n_frames, cfg.n_mels), "input_rms": (cfg.n_frames, 1)}
        for i, f in enumerate(cfg.eff_conv_filters):
            if t % 2:
                raise ConfigError(f"time axis {t} not divisible by 2 at block {i + 1}")
            t //= 2
            ledger[f"block{i + 1}"] = (t, cfg.n_mels, f)
        ledger["branch_repr"] = (cfg.time_steps, cfg.eff_d_model)
        ledger["attention"] = (cfg.heads, cfg.time_steps, cfg.time_steps)
        ledger["fused"] = (cfg.time_steps, cfg.eff_fusion_dim)
        ledger["source_probs"] = (cfg.n_classes,)
        assert ledger["branch_repr"][0] == t
        return ledger

    def fuse(self, r_m, r_r):
        """Cross-attention fusion of the two branch representations."""
        out1 = self.mha1(r_m, r_r, r_r)
        out2 = self.mha2(r_r, r_m, r_m)
        joined = ag.concat([out1, out2], axis=-1)
        return ag.relu(self.fusion(joined))

    def forward_batch(self, mel, rms, train):
        self._check_inputs(mel, rms)
        x_m = Tensor(mel[..., None].astype(self._dtype))
        x_r = Tensor(rms[..., None, None].astype(self._dtype))
        r_m = self.mel_branch(x_m, train)              # (B, T, d)
        r_r = self.rms_branch(x_r, train)              # (B, T, d)
        fused = self.fuse(r_m, r_r)                    # (B, T, fusion)

        embed = ag.relu(self.ssc_embed(r_m.mean(axis=1)))
        probs = ag.sigmoid(self.ssc_out(embed))        # (B, 24)
        annoy = self.arp_head(fused.mean(axis=1))      # (B, 1)
        return probs, annoy.reshape((annoy.shape[0],))

    def attention_maps(self):
        """(2, B, heads, T, T) attention weights from the last forward."""
        if self.mha1.last_attention is None:
            return None
        return np.stack([self.mha1.last_attention, self.mha2.last_attention])


class SingleBranchModel(_ModelBase):
    """Feature-ablation variant: one branch, no cross-attention."""

    def __init__(self, variant, config: ModelConfig, rng_seed=0, dtype=np.float32):
        if variant not in ("mel-only", "rms-only"):
            raise ConfigError(f"unknown ablation variant '{variant}'")
        super().__init__(config)
        self.kind = variant
        self._dtype = dtype
        rng = np.random.default_rng(rng_seed)
        cfg = self.config
        d = cfg.eff_d_model
        self.branch = self._register("branch", _ConvBranch(cfg.eff_conv_filters, rng, dtype))
        self.arp_head = self._register("arp_head", ag.Linear(d, 1, rng, dtype))
        self.ssc_embed = self._register("ssc_embed", ag.Linear(d, cfg.eff_embedding_dim, rng, dtype))
        self.ssc_out = self._register("ssc_out", ag.Linear(cfg.eff_embedding_dim, cfg.n_classes, rng, dtype))

    def forward_batch(self, mel, rms, train):
        self._check_inputs(mel, rms)
        if self.kind == "mel-only":
            x = Tensor(mel[..., None].astype(self._dtype))
        else:
            x = Tensor(rms[..., None, None].astype(self._dtype))
        rep = self.branch(x, train).mean(axis=1)       # (B, d)
        embed = ag.relu(self.ssc_embed(rep))
        probs = ag.sigmoid(self.ssc_out(embed))
        annoy = self.arp_head(rep)
        return probs, annoy.reshape((annoy.shape[0],))


class DnnModel(_ModelBase):
    """Two branches of four per-frame linear+ReLU layers, time-averaged."""

    kind = "dnn"

    def __init__(self, config: ModelConfig, rng_seed=0, dtype=np.float32):
        super().__init__(config)
        self._dtype = dtype
        rng = np.random.default_rng(rng_seed)
        cfg = self.config
        widths = cfg.eff_dnn_widths
        self.mel_layers = []
        self.rms_layers = []
        for branch, d_in, store in (("mel", cfg.n_mels, self.mel_layers),
                                    ("rms", 1, self.rms_layers)):
            for i, w in enumerate(widths):
                store.append(self._register(f"{branch}.fc{i + 1}",
                                            ag.Linear(d_in, w, rng, dtype)))
                d_in = w
        joint = 2 * widths[-1]
        self.ssc_out = self._register("ssc_out", ag.Linear(joint, cfg.n_classes, rng, dtype))
        self.arp_head = self._register("arp_head", ag.Linear(joint, 1, rng, dtype))

    def _branch(self, x, layers):
        for layer in layers:
            x = ag.relu(layer(x))
        return x.mean(axis=1)

    def forward_batch(self, mel, rms, train):
        self._check_inputs(mel, rms)
        m = self._branch(Tensor(mel.astype(self._dtype)), self.mel_layers)
        r = self._branch(Tensor(rms[..., None].astype(self._dtype)), self.rms_layers)
        joined = ag.concat([m, r], axis=-1)
        probs = ag.sigmoid(self.ssc_out(joined))
        annoy = self.arp_head(joined)
        return probs, annoy.reshape((annoy.shape[0],))


class _CnnBranch:
    """conv-BN-relu-pool twice; time axis is divided by 4."""

    def __init__(self, filters, rng, dtype):
        f1, f2 = filters
        self.conv1 = ag.Conv2d(1, f1, rng, dtype)
        self.bn1 = ag.BatchNorm(f1, dtype)
        self.conv2 = ag.Conv2d(f1, f2, rng, dtype)
        self.bn2 = ag.BatchNorm(f2, dtype)

    def __call__(self, x, train):
        x = ag.avg_pool2d(ag.relu(self.bn1(self.conv1(x), train)), kh=2, kw=1)
        x = ag.avg_pool2d(ag.relu(self.bn2(self.conv2(x), train)), kh=2, kw=1)
        return x.mean(axis=2)  # (B, T/4, f2)

    def parameters(self):
        out = []
        for prefix, layer in [("conv1", self.conv1), ("bn1", self.bn1),
                              ("conv2", self.conv2), ("bn2", self.bn2)]:
            out.extend((f"{prefix}.{n}", p) for n, p in layer.parameters())
        return out

    def buffers(self):
        out = []
        for prefix, layer in [("bn1", self.bn1), ("bn2", self.bn2)]:
            out.extend((f"{prefix}.{n}", b) for n, b in layer.buffers())
        return out


class CnnModel(_ModelBase):
    """Dual-branch two-layer CNN baseline."""

    kind = "cnn"

    def __init__(self, config: ModelConfig, rng_seed=0, dtype=np.float32):
        super().__init__(config)
        self._dtype = dtype
        rng = np.random.default_rng(rng_seed)
        cfg = self.config
        filters = cfg.eff_cnn_filters
        self.mel_branch = self._register("mel", _CnnBranch(filters, rng, dtype))
        self.rms_branch = self._register("rms", _CnnBranch(filters, rng, dtype))
        joint = 2 * filters[-1]
        self.ssc_out = self._register("ssc_out", ag.Linear(joint, cfg.n_classes, rng, dtype))
        self.arp_head = self._register("arp_head", ag.Linear(joint, 1, rng, dtype))

    def _pooled(self, mel, rms, train):
        m = self.mel_branch(Tensor(mel[..., None].astype(self._dtype)), train)
        r = self.rms_branch(Tensor(rms[..., None, None].astype(self._dtype)), train)
        return m, r

    def forward_batch(self, mel, rms, train):
        self._check_inputs(mel, rms)
        m, r = self._pooled(mel, rms, train)
        joined = ag.concat([m.mean(axis=1), r.mean(axis=1)], axis=-1)
        probs = ag.sigmoid(self.ssc_out(joined))
        annoy = self.arp_head(joined)
        return probs, annoy.reshape((annoy.shape[0],))


class CnnTransformerModel(CnnModel):
    """CNN baseline with one self-attention encoder block per branch."""

    kind = "cnn-transformer"

    def __init__(self, config: ModelConfig, rng_seed=0, dtype=np.float32):
        super().__init__(config, rng_seed, dtype)
        cfg = self.config
        d = cfg.eff_cnn_filters[-1]
        heads = cfg.encoder_heads
        if d % heads:
            raise ConfigError(f"encoder width {d} not divisible by {heads} heads")
        rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 1]))
        self.mel_encoder = self._register(
            "mel_encoder", ag.TransformerEncoderBlock(d, heads, rng, dtype))
        self.rms_encoder = self._register(
            "rms_encoder", ag.TransformerEncoderBlock(d, heads, rng, dtype))

    def forward_batch(self, mel, rms, train):
        self._check_inputs(mel, rms)
        m, r = self._pooled(mel, rms, train)
        m = self.mel_encoder(m).mean(axis=1)
        r = self.rms_encoder(r).mean(axis=1)
        joined = ag.concat([m, r], axis=-1)
        probs = ag.sigmoid(self.ssc_out(joined))
        annoy = self.arp_head(joined)
        return probs, annoy.reshape((annoy.shape[0],))


# ----------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------

def build_dcnn_caf(config: ModelConfig, rng_seed=0, dtype=np.float32) -> DcnnCafModel:
    return DcnnCafModel(config, rng_seed, dtype)


def build_ablation(variant, config: ModelConfig, rng_seed=0, dtype=np.float32):
    return SingleBranchModel(variant, config, rng_seed, dtype)


def build_baseline(kind, config: ModelConfig, rng_seed=0, dtype=np.float32):
    table = {"dnn": DnnModel, "cnn": CnnModel, "cnn-transformer": CnnTransformerModel}
    if kind not in table:
        raise ConfigError(f"unknown baseline '{kind}'; choose from {sorted(table)}")
    return table[kind](config, rng_seed, dtype)


def build_model(kind, config: ModelConfig, rng_seed=0, dtype=np.float32):
    """Factory covering every model kind the CLI exposes."""
    if kind == "dcnn-caf":
        return build_dcnn_caf(config, rng_seed, dtype)
    if kind in ("mel-only", "rms-only"):
        return build_ablation(kind, config, rng_seed, dtype)
    if kind in ("dnn", "cnn", "cnn-transformer"):
        return build_baseline(kind, config, rng_seed, dtype)
    raise ConfigError(f"unknown model kind '{kind}'; choose from {MODEL_KINDS}")


def ssc_branch_parameter_count(model: DcnnCafModel):
    """Parameters on the source-classification path (Mel branch + heads)."""
    total = 0
    for name, p in model.parameters():
        if name.startswith(("mel.", "ssc_embed.", "ssc_out.")):
            total += p.size
    return int(total)
