"""Batching, the joint training loop, and the checkpoint container.

Container layout (also used for cached features): 8-byte magic
``DCAFCKPT``, a little-endian uint32 header length, a UTF-8 ``key=value``
header whose ``tensor.<i>`` entries are ``name;dtype;d0xd1x...;offset``,
then the raw little-endian float32 payloads in header order.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import DatasetManifest, load_wav, resolve_clip_path
from .autograd import Adam, bce_loss, joint_loss, mse_loss
from .errors import CheckpointError, InputError, NumericError
from .features import FeaturePair, extract_features
from .model import ModelConfig, build_model

logger = logging.getLogger(__name__)

CONTAINER_MAGIC = b"DCAFCKPT"
CONTAINER_VERSION = 1

HISTORY_COLUMNS = ("epoch", "train_loss", "val_mae", "val_rmse",
                   "val_auc", "val_f1", "val_acc")


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    epochs: int = 100
    seed: int = 0
    loss_weight_ssc: float = 1.0
    loss_weight_arp: float = 1.0
    eval_every_epoch: bool = True
    precision: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class Batch:
    clip_ids: list
    mel: np.ndarray   # (B, 480, 64)
    rms: np.ndarray   # (B, 480)
    labels: np.ndarray  # (B, 24)
    annoyance: np.ndarray  # (B,)


# ----------------------------------------------------------------------
# feature access
# ----------------------------------------------------------------------

class FeatureStore:
    """Resolves features per clip: cache file, else compute (and cache).

    Cache files live in ``<manifest dir>/features/<clip_id>.feat`` using the
    checkpoint container format with tensors named ``mel`` and ``rms``.
    """

    def __init__(self, manifest_path, cache=True, keep_in_memory=True):
        self.manifest_path = Path(manifest_path)
        self.cache_dir = self.manifest_path.parent / "features"
        self.cache = cache
        self._memory = {} if keep_in_memory else None

    def cache_path(self, clip_id):
        return self.cache_dir / f"{clip_id}.feat"

    def get(self, record) -> FeaturePair:
        if self._memory is not None and record.clip_id in self._memory:
            return self._memory[record.clip_id]
        pair = None
        path = self.cache_path(record.clip_id)
        if self.cache and path.exists():
            tensors = dict(read_container(path)[1])
            pair = FeaturePair(tensors["mel"], tensors["rms"])
        if pair is None:
            wav_path = resolve_clip_path(self.manifest_path, record)
            if not wav_path.exists():
                raise InputError(f"clip '{record.clip_id}': audio file {wav_path} missing")
            pair = extract_features(load_wav(wav_path))
            if self.cache:
                self.cache_dir.mkdir(parents=True, exist_ok=True)
                write_container(path, {"kind": "features", "clip_id": record.clip_id},
                                [("mel", pair.mel), ("rms", pair.rms)])
        if self._memory is not None:
            self._memory[record.clip_id] = pair
        return pair


def make_batches(manifest: DatasetManifest, store: FeatureStore, batch_size,
                 seed, epoch):
    """Epoch-shuffled batches; the final short batch is kept.

    The shuffle is keyed by (seed, epoch) so a given epoch's order is
    reproducible in isolation.
    """
    order = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch)]))
    perm = order.permutation(len(manifest.records))
    records = [manifest.records[i] for i in perm]
    for lo in range(0, len(records), batch_size):
        chunk = records[lo:lo + batch_size]
        pairs = [store.get(r) for r in chunk]
        yield Batch(
            clip_ids=[r.clip_id for r in chunk],
            mel=np.stack([p.mel for p in pairs]),
            rms=np.stack([p.rms for p in pairs]),
            labels=np.stack([r.label_array() for r in chunk]),
            annoyance=np.array([r.annoyance for r in chunk], dtype=np.float32),
        )


# ----------------------------------------------------------------------
# training loop
# ----------------------------------------------------------------------

@dataclass
class TrainResult:
    model: object
    history: list            # dict rows matching HISTORY_COLUMNS
    best_epoch: int
    best_metric: float
    best_state: list         # named arrays of the best-val epoch


def selection_metric(val_mae, val_auc):
    """Model-selection score: val MAE + (1 - val AUC); lower is better."""
    auc = 0.5 if val_auc is None else val_auc
    return float(val_mae) + (1.0 - float(auc))


def evaluate_on_manifest(model, manifest, store, batch_size=64):
    """Run inference over a manifest; returns (probs, raw annoyance)."""
    probs, annoys = [], []
    for lo in range(0, len(manifest.records), batch_size):
        chunk = manifest.records[lo:lo + batch_size]
        pairs = [store.get(r) for r in chunk]
        mel = np.stack([p.mel for p in pairs])
        rms = np.stack([p.rms for p in pairs])
        p, a = model.forward_batch(mel, rms, train=False)
        probs.append(p.data.copy())
        annoys.append(a.data.copy())
    return np.concatenate(probs), np.concatenate(annoys)


def train(model, train_manifest, val_manifest, cfg: TrainConfig,
          store: FeatureStore, val_store: FeatureStore | None = None,
          log_progress=True):
    """Joint-loss training with per-epoch validation and best-val retention."""
    from .evaluation import mae_rmse, ssc_metrics
    from .model import clamp_rating

    val_store = val_store or store
    optimizer = Adam([(n, p) for n, p in model.parameters()], lr=cfg.lr)
    history = []
    best = None  # (metric, epoch, state)
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for i_batch, batch in enumerate(
                make_batches(train_manifest, store, cfg.batch_size, cfg.seed, epoch)):
            probs, annoy = model.forward_batch(batch.mel, batch.rms, train=True)
            l_ssc = bce_loss(probs, batch.labels)
            l_arp = mse_loss(annoy, batch.annoyance)
            loss = joint_loss(l_ssc, l_arp, cfg.loss_weight_ssc, cfg.loss_weight_arp)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} batch {i_batch} "
                    f"(clips {batch.clip_ids[:3]}...)"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.data))
        train_loss = float(np.mean(losses))

        row = {"epoch": epoch, "train_loss": train_loss, "val_mae": float("nan"),
               "val_rmse": float("nan"), "val_auc": float("nan"),
               "val_f1": float("nan"), "val_acc": float("nan")}
        if cfg.eval_every_epoch and len(val_manifest.records):
            probs, annoy = evaluate_on_manifest(model, val_manifest, val_store,
                                                cfg.batch_size)
            clamped = np.array([clamp_rating(a) for a in annoy])
            arp = mae_rmse(clamped, val_manifest.annoyance_vector())
            ssc = ssc_metrics(probs, val_manifest.label_matrix())
            row.update(val_mae=arp.mae, val_rmse=arp.rmse, val_auc=ssc.auc,
                       val_f1=ssc.f_score, val_acc=ssc.acc)
            metric = selection_metric(arp.mae, ssc.auc)
            if best is None or metric < best[0]:
                state = [(n, a.copy()) for n, a in model.state_tensors()]
                best = (metric, epoch, state)
        history.append(row)
        if log_progress:
            logger.info(
                "epoch %d: train_loss=%.4f val_mae=%.3f val_auc=%.3f",
                epoch, train_loss, row["val_mae"], row["val_auc"],
            )

    if best is None:  # no validation data: keep the final state
        best = (float("nan"), cfg.epochs, [(n, a.copy()) for n, a in model.state_tensors()])
    model.load_state(best[2])
    return TrainResult(model, history, best_epoch=best[1], best_metric=best[0],
                       best_state=best[2])


def history_to_csv(history, path):
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(",".join(
            str(row["epoch"]) if col == "epoch" else f"{row[col]:.6f}"
            for col in HISTORY_COLUMNS
        ))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ----------------------------------------------------------------------
# container I/O
# ----------------------------------------------------------------------

def write_container(path, header: dict, tensors):
    """Write named float32 arrays with a key-value text header."""
    entries = []
    offset = 0
    payloads = []
    for i, (name, arr) in enumerate(tensors):
        if ";" in name or "\n" in name or "=" in name:
            raise CheckpointError(f"illegal tensor name '{name}'")
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        shape = "x".join(str(d) for d in arr32.shape)
        entries.append(f"tensor.{i}={name};float32;{shape};{offset}")
        payloads.append(arr32.tobytes())
        offset += arr32.nbytes
    lines = [f"format_version={CONTAINER_VERSION}"]
    lines.extend(f"{k}={v}" for k, v in header.items())
    lines.extend(entries)
    blob = "\n".join(lines).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for payload in payloads:
            fh.write(payload)


def read_container(path):
    """Returns (header dict, [(name, float32 array)]); validates integrity."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CONTAINER_MAGIC) + 4 or raw[:len(CONTAINER_MAGIC)] != CONTAINER_MAGIC:
        raise CheckpointError(f"{path}: bad container magic")
    header_len = struct.unpack_from("<I", raw, len(CONTAINER_MAGIC))[0]
    header_start = len(CONTAINER_MAGIC) + 4
    if len(raw) < header_start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    header_text = raw[header_start:header_start + header_len].decode("utf-8")
    payload = raw[header_start + header_len:]

    header = {}
    specs = []
    for line in header_text.splitlines():
        key, value = line.split("=", 1)
        if key.startswith("tensor."):
            name, dtype, shape_s, offset_s = value.split(";")
            if dtype != "float32":
                raise CheckpointError(f"{path}: unsupported tensor dtype {dtype}")
            shape = tuple(int(d) for d in shape_s.split("x")) if shape_s else ()
            specs.append((name, shape, int(offset_s)))
        else:
            header[key] = value
    if header.get("format_version") != str(CONTAINER_VERSION):
        raise CheckpointError(
            f"{path}: container version {header.get('format_version')} "
            f"!= {CONTAINER_VERSION}"
        )
    tensors = []
    for name, shape, offset in specs:
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload for tensor '{name}'")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4,
                            offset=offset).reshape(shape)
        tensors.append((name, arr.copy()))
    return header, tensors


def save_checkpoint(model, path, epoch=0, metrics=None):
    """Persist a model (parameters + buffers) with its rebuild recipe."""
    header = {"kind": "checkpoint", "model_kind": model.kind, "epoch": str(epoch)}
    for key, value in model.config.to_kv().items():
        header[f"config.{key}"] = value
    for key, value in (metrics or {}).items():
        header[f"metric.{key}"] = f"{value:.6f}"
    write_container(path, header, model.state_tensors())


def load_checkpoint(path):
    """Rebuild the model recorded in a checkpoint; returns (model, header)."""
    header, tensors = read_container(path)
    if header.get("kind") != "checkpoint":
        raise CheckpointError(f"{path}: container is not a checkpoint")
    config_kv = {k[len("config."):]: v for k, v in header.items()
                 if k.startswith("config.")}
    config = ModelConfig.from_kv(config_kv)
    model = build_model(header["model_kind"], config, rng_seed=0)
    model.load_state(tensors)
    return model, header
