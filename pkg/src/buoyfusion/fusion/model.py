"""Chart-query detection transformer.

Chart markers selected for a frame become queries; the image becomes a
token grid via a strided conv backbone plus encoder layers; a decoder
refines one slot per query and two heads emit a normalized box and a
visibility probability per marker. Identity is carried by the query, so
no post-hoc matching step is needed at inference time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, embedding_lookup
from .nn import (
    MLP,
    Backbone,
    DecoderLayer,
    DeformableCrossAttention,
    EncoderLayer,
    Linear,
    MultiHeadAttention,
    sinusoidal_pos_enc_2d,
)

CHECKPOINT_MAGIC = b"BFCK"
CHECKPOINT_VERSION = 1

EMBEDDING_KINDS = ("mlp", "learned-discrete")
CROSS_ATTENTION_KINDS = ("dense", "deformable")
SAMPLING_POINT_CHOICES = (4, 8, 16, 32, 64)

# Bucket tables for the learned-discrete embedding. Distance is cut at
# 25 m steps of a 1000 m range (41 entries incl. the cap bucket),
# bearing at 12.5-unit steps of the [0, 1000] scaled span (81 entries).
N_DIST_BUCKETS = 41
N_BEARING_BUCKETS = 81
DIST_BUCKET_DIV = 25.0
BEARING_BUCKET_DIV = 12.5


class ConfigMismatch(ValueError):
    """Checkpoint was produced by a model with different hyperparameters."""


class CheckpointError(ValueError):
    """Checkpoint bytes are malformed or truncated."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ffn_dim: int = 128
    embedding_kind: str = "mlp"
    cross_attention_kind: str = "dense"
    sampling_points: int = 4
    image_hw: tuple = (54, 96)
    backbone_channels: tuple = (16, 32)
    in_channels: int = 3

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ValueError(f"d_model must be positive and even, got {self.d_model}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 4 != 0:
            raise ValueError("d_model must be a multiple of 4 for the 2-d position code")
        if self.embedding_kind not in EMBEDDING_KINDS:
            raise ValueError(f"unknown embedding kind {self.embedding_kind!r}")
        if self.cross_attention_kind not in CROSS_ATTENTION_KINDS:
            raise ValueError(f"unknown cross attention kind {self.cross_attention_kind!r}")
        if self.sampling_points not in SAMPLING_POINT_CHOICES:
            raise ValueError(
                f"sampling_points must be one of {SAMPLING_POINT_CHOICES}, "
                f"got {self.sampling_points}")
        if len(self.backbone_channels) != 2:
            raise ValueError("backbone_channels must list the two hidden widths")
        for side in self.image_hw:
            if side < 8:
                raise ValueError(f"image side {side} too small for three 2x reductions")

    @property
    def feature_map_hw(self) -> tuple:
        return Backbone.output_hw(self.image_hw[0], self.image_hw[1])

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
            "ffn_dim": self.ffn_dim,
            "embedding_kind": self.embedding_kind,
            "cross_attention_kind": self.cross_attention_kind,
            "sampling_points": self.sampling_points,
            "image_hw": list(self.image_hw),
            "backbone_channels": list(self.backbone_channels),
            "in_channels": self.in_channels,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["image_hw"] = tuple(d["image_hw"])
        d["backbone_channels"] = tuple(d["backbone_channels"])
        return ModelConfig(**d)


@dataclass(frozen=True)
class QueryBatch:
    """Padded per-frame chart queries.

    features: [b, n, 2] float64, (dist / d_max, bearing / pi); zero on pads.
    mask:     [b, n] bool, True where a real query sits.
    marker_ids: per-frame tuples of marker ids, aligned with the rows.
    d_max:    the normalization range, kept so raw meters can be
              recovered for the discrete-bucket embedding.
    """

    features: np.ndarray
    mask: np.ndarray
    marker_ids: tuple
    d_max: float = 1000.0

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]

    @property
    def n_queries(self) -> int:
        return self.features.shape[1]


def make_query_batch(per_frame_queries, d_max: float) -> QueryBatch:
    """Pack variable-length query lists into one padded batch.

    per_frame_queries: iterable of sequences of BuoyQuery.
    """
    if d_max <= 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    frames = [tuple(qs) for qs in per_frame_queries]
    b = len(frames)
    n = max((len(qs) for qs in frames), default=0)
    n = max(n, 1)
    feats = np.zeros((b, n, 2))
    mask = np.zeros((b, n), dtype=bool)
    ids = []
    for i, qs in enumerate(frames):
        for j, q in enumerate(qs):
            feats[i, j, 0] = q.polar.dist / d_max
            feats[i, j, 1] = q.polar.bearing / np.pi
            mask[i, j] = True
        ids.append(tuple(q.marker_id for q in qs))
    return QueryBatch(features=feats, mask=mask, marker_ids=tuple(ids),
                      d_max=float(d_max))


@dataclass(frozen=True)
class GroundTruth:
    """Targets aligned with a QueryBatch.

    visible: [b, n] float64 in {0, 1}; padded slots are 0.
    boxes:   [b, n, 4] normalized (cx, cy, w, h); rows with visible=0 are
             ignored by the loss and may hold anything finite.
    """

    visible: np.ndarray
    boxes: np.ndarray


def make_ground_truth(batch: QueryBatch, per_frame_boxes) -> GroundTruth:
    """per_frame_boxes: per frame, a dict marker_id -> (cx, cy, w, h)."""
    b, n = batch.mask.shape
    vis = np.zeros((b, n))
    boxes = np.zeros((b, n, 4))
    for i, frame_boxes in enumerate(per_frame_boxes):
        for j, mid in enumerate(batch.marker_ids[i]):
            if mid in frame_boxes:
                vis[i, j] = 1.0
                boxes[i, j] = np.asarray(frame_boxes[mid], dtype=float)
    return GroundTruth(visible=vis, boxes=boxes)


def bucket_indices(features: np.ndarray, d_max: float = 1000.0):
    """Bucket (dist, bearing) features for the learned tables.

    Distance is taken back to raw meters, clamped to [0, 1000], and cut
    at 25 m; bearing is rescaled from [-pi, pi) to [0, 1000] and cut at
    12.5. The top bucket catches the clamp boundary so every input
    lands in range (dist exactly 1000 m -> index 40).
    """
    dist_raw = np.clip(features[..., 0] * d_max, 0.0, 1000.0)
    bear_scaled = (np.clip(features[..., 1], -1.0, 1.0) + 1.0) / 2.0 * 1000.0
    dist_idx = np.minimum(np.floor(dist_raw / DIST_BUCKET_DIV).astype(np.intp),
                          N_DIST_BUCKETS - 1)
    bear_idx = np.minimum(np.floor(bear_scaled / BEARING_BUCKET_DIV).astype(np.intp),
                          N_BEARING_BUCKETS - 1)
    return dist_idx, bear_idx


@dataclass(frozen=True)
class FusionPrediction:
    """Per-query outputs for one frame batch, as plain arrays."""

    boxes: np.ndarray
    visibility: np.ndarray
    marker_ids: tuple
    mask: np.ndarray


class FusionModel:
    """Backbone + encoder over image tokens, decoder over chart queries."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.d_model
        c1, c2 = config.backbone_channels
        self.backbone = Backbone(rng, config.in_channels, (c1, c2), d)
        fh, fw = config.feature_map_hw
        self._pos = Tensor(sinusoidal_pos_enc_2d(fh, fw, d)[None, :, :],
                           requires_grad=False)
        self.encoder_layers = [
            EncoderLayer(rng, d, config.n_heads, config.ffn_dim)
            for _ in range(config.n_encoder_layers)
        ]
        if config.embedding_kind == "mlp":
            self.embed_mlp = MLP(rng, [2, d, d])
            self.dist_table = None
            self.bearing_table = None
        else:
            self.embed_mlp = None
            half = d // 2
            self.dist_table = Tensor(rng.normal(0.0, 0.02, (N_DIST_BUCKETS, half)),
                                     requires_grad=True)
            self.bearing_table = Tensor(rng.normal(0.0, 0.02, (N_BEARING_BUCKETS, half)),
                                        requires_grad=True)
        if config.cross_attention_kind == "deformable":
            self.ref_mlp = MLP(rng, [2, 16, 2])
        else:
            self.ref_mlp = None
        self.decoder_layers = []
        for _ in range(config.n_decoder_layers):
            if config.cross_attention_kind == "deformable":
                cross = DeformableCrossAttention(rng, d, config.n_heads,
                                                 config.sampling_points)
            else:
                cross = MultiHeadAttention(rng, d, config.n_heads)
            self.decoder_layers.append(
                DecoderLayer(rng, d, config.n_heads, config.ffn_dim, cross))
        self.box_head = MLP(rng, [d, d, d, 4])
        self.vis_head = Linear(rng, d, 1)

    # -- parameters ----------------------------------------------------

    def params(self):
        out = self.backbone.params("backbone")
        for i, layer in enumerate(self.encoder_layers):
            out.extend(layer.params(f"encoder.{i}"))
        if self.embed_mlp is not None:
            out.extend(self.embed_mlp.params("embed_mlp"))
        else:
            out.append(("dist_table", self.dist_table))
            out.append(("bearing_table", self.bearing_table))
        if self.ref_mlp is not None:
            out.extend(self.ref_mlp.params("ref_mlp"))
        for i, layer in enumerate(self.decoder_layers):
            out.extend(layer.params(f"decoder.{i}"))
        out.extend(self.box_head.params("box_head"))
        out.extend(self.vis_head.params("vis_head"))
        return out

    # -- submodule passes ----------------------------------------------

    def encode_image(self, scenes) -> Tensor:
        """scenes: [b, H, W, C] float in [0, 1] -> memory tokens [b, hw, d]."""
        arr = scenes.data if isinstance(scenes, Tensor) else np.asarray(scenes, dtype=float)
        if arr.ndim != 4:
            raise ValueError(f"scenes must be [b, h, w, c], got shape {arr.shape}")
        h, w = self.config.image_hw
        if arr.shape[1] != h or arr.shape[2] != w or arr.shape[3] != self.config.in_channels:
            raise ValueError(
                f"scene shape {arr.shape[1:]} does not match configured "
                f"{(h, w, self.config.in_channels)}")
        x = scenes if isinstance(scenes, Tensor) else Tensor(arr, requires_grad=False)
        fmap = self.backbone(x)
        b = arr.shape[0]
        fh, fw = self.config.feature_map_hw
        tokens = fmap.reshape(b, fh * fw, self.config.d_model)
        for layer in self.encoder_layers:
            tokens = layer(tokens, self._pos)
        return tokens

    def embed_queries(self, batch: QueryBatch) -> Tensor:
        feats = batch.features
        if self.embed_mlp is not None:
            flat = Tensor(feats.reshape(-1, 2), requires_grad=False)
            emb = self.embed_mlp(flat)
            return emb.reshape(batch.batch_size, batch.n_queries, self.config.d_model)
        dist_idx, bear_idx = bucket_indices(feats, batch.d_max)
        de = embedding_lookup(self.dist_table, dist_idx)
        be = embedding_lookup(self.bearing_table, bear_idx)
        return concat([de, be], axis=-1)

    def _reference_points(self, batch: QueryBatch) -> Tensor:
        flat = Tensor(batch.features.reshape(-1, 2), requires_grad=False)
        ref = self.ref_mlp(flat).sigmoid()
        return ref.reshape(batch.batch_size, batch.n_queries, 2)

    def forward(self, scenes, batch: QueryBatch):
        """Returns (boxes Tensor [b, n, 4], visibility Tensor [b, n]).

        Padded slots still get outputs; the loss and infer() drop them via
        the batch mask.
        """
        memory = self.encode_image(scenes)
        tgt = self.embed_queries(batch)
        ref = self._reference_points(batch) if self.ref_mlp is not None else None
        for layer in self.decoder_layers:
            tgt = layer(tgt, memory, batch.mask, ref, self.config.feature_map_hw)
        boxes = self.box_head(tgt).sigmoid()
        vis = self.vis_head(tgt).sigmoid()
        b, n = batch.mask.shape
        return boxes, vis.reshape(b, n)

    def predict(self, scenes, batch: QueryBatch) -> FusionPrediction:
        boxes, vis = self.forward(scenes, batch)
        return FusionPrediction(boxes=boxes.data.copy(), visibility=vis.data.copy(),
                                marker_ids=batch.marker_ids, mask=batch.mask.copy())


# -- checkpoints -------------------------------------------------------


def save_checkpoint(path, model: FusionModel) -> None:
    params = model.params()
    header = {
        "config": model.config.to_dict(),
        "params": [{"name": n, "shape": list(t.data.shape)} for n, t in params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in params:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def _read_header(fh, label) -> dict:
    magic = fh.read(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{label}: bad magic {magic!r}")
    version = struct.unpack("<I", fh.read(4))[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{label}: unsupported version {version}")
    (hlen,) = struct.unpack("<Q", fh.read(8))
    raw = fh.read(hlen)
    if len(raw) != hlen:
        raise CheckpointError(f"{label}: truncated header")
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{label}: corrupt header: {exc}") from exc


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, str(path))


def load_checkpoint(path, model: FusionModel) -> None:
    """Load weights into an existing model; config must match exactly."""
    with open(path, "rb") as fh:
        header = _read_header(fh, str(path))
        if header["config"] != model.config.to_dict():
            raise ConfigMismatch(
                f"checkpoint config {header['config']} != model config "
                f"{model.config.to_dict()}")
        params = model.params()
        names = [{"name": n, "shape": list(t.data.shape)} for n, t in params]
        if names != header["params"]:
            raise CheckpointError(f"{path}: parameter inventory mismatch")
        for _, t in params:
            count = int(np.prod(t.data.shape)) if t.data.shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated parameter data")
            t.data = np.frombuffer(raw, dtype="<f8").reshape(t.data.shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after parameters")


def model_from_checkpoint(path) -> FusionModel:
    header = read_checkpoint_header(path)
    model = FusionModel(ModelConfig.from_dict(header["config"]), seed=0)
    load_checkpoint(path, model)
    return model
