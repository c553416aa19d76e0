"""Factorization-machine CTR models over one-hot-per-field inputs.

Both backbones share the same parameter layout: an embedding table E of shape
(n, d), per-feature linear weights w, a global bias b, and for the deep
variant a small ReLU MLP fed the concatenated active embeddings. The
pre-sigmoid score of an instance with active ids (i_1..i_m) is

    z = b + sum_j w[i_j] + pairwise(E[i_1..i_m])  [+ mlp(concat E[i_j])]

where pairwise is the usual half-of-square-minus-sum-of-squares form, summed
over embedding columns. Predictions are sigmoid(z) clamped away from 0 and 1.

Everything runs in float64 and is deterministic under a fixed seed; training
the same config twice yields byte-identical checkpoints.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import serialization as ser
from .codebook import Codebook, codebook_section_payload, codebook_from_section
from .data import Vocabulary, Instance

EPS = 1e-7

FM = "fm"
DEEPFM = "deepfm"

_BACKBONE_TAGS = {FM: ser.TAG_MODEL_FM, DEEPFM: ser.TAG_MODEL_DEEPFM}
_TAG_BACKBONES = {tag: kind for kind, tag in _BACKBONE_TAGS.items()}


class NonFiniteError(ArithmeticError):
    """A forward stage produced a non-finite value."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; message carries epoch and batch."""


@dataclass
class EmbeddingTable:
    values: np.ndarray
    offsets: np.ndarray

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])

    @property
    def field_count(self) -> int:
        return int(self.offsets.shape[0]) - 1


@dataclass
class BackboneParams:
    kind: str
    bias: float
    linear: np.ndarray
    layers: list  # [(W, b)] pairs: hidden layers with ReLU, then linear output


@dataclass
class PruneMask:
    """Set of pruned (feature id, embedding column) coordinates.

    Stored as sorted rows: col_idx[row_ptr[i]:row_ptr[i+1]] are the pruned
    columns of feature i, strictly increasing.
    """

    row_ptr: np.ndarray
    col_idx: np.ndarray
    shape: tuple

    def __post_init__(self):
        self._dense = None

    @classmethod
    def from_dense(cls, flags: np.ndarray) -> "PruneMask":
        rows, cols = np.nonzero(flags)
        row_ptr = np.zeros(flags.shape[0] + 1, np.int64)
        np.cumsum(np.bincount(rows, minlength=flags.shape[0]), out=row_ptr[1:])
        return cls(row_ptr, cols.astype(np.int32), flags.shape)

    def dense(self) -> np.ndarray:
        if self._dense is None:
            flags = np.zeros(self.shape, bool)
            rows = np.repeat(np.arange(self.shape[0]), np.diff(self.row_ptr))
            flags[rows, self.col_idx] = True
            self._dense = flags
        return self._dense

    @property
    def count(self) -> int:
        return int(self.col_idx.shape[0])

    def section_payload(self) -> bytes:
        w = ser.ByteWriter()
        w.u64(self.shape[0])
        w.u64(self.shape[1])
        w.array(self.row_ptr.astype("<u8"))
        w.array(self.col_idx.astype("<u4"))
        return w.getvalue()

    @classmethod
    def from_section(cls, payload: bytes) -> "PruneMask":
        r = ser.ByteReader(payload)
        n, d = r.u64(), r.u64()
        row_ptr = np.frombuffer(r.take(8 * (n + 1)), "<u8").astype(np.int64)
        count = int(row_ptr[-1])
        col_idx = np.frombuffer(r.take(4 * count), "<u4").astype(np.int32)
        return cls(row_ptr, col_idx, (n, d))


@dataclass
class Model:
    embedding: EmbeddingTable
    backbone: BackboneParams
    vocab: Vocabulary | None = None
    codebook: Codebook | None = None
    mask: PruneMask | None = None


@dataclass
class TrainConfig:
    backbone: str = FM
    dim: int = 8
    hidden: tuple = (16, 16)
    epochs: int = 5
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in (FM, DEEPFM):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.dim < 1:
            raise ValueError("embedding dim must be at least 1")
        if self.backbone == DEEPFM and any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")


def init_model(vocab: Vocabulary, config: TrainConfig) -> Model:
    """Fresh model: embeddings uniform in +-1/sqrt(d), MLP He-uniform,
    linear weights and bias zero. Draw order is fixed, so a given seed
    always produces the same parameters."""
    rng = np.random.default_rng(config.seed)
    n, d = vocab.n, config.dim
    bound = 1.0 / math.sqrt(d)
    values = rng.uniform(-bound, bound, (n, d))
    layers = []
    if config.backbone == DEEPFM:
        widths = [vocab.field_count * d, *config.hidden, 1]
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = math.sqrt(6.0 / fan_in)
            layers.append((rng.uniform(-limit, limit, (fan_out, fan_in)), np.zeros(fan_out)))
    backbone = BackboneParams(config.backbone, 0.0, np.zeros(n), layers)
    return Model(EmbeddingTable(values, vocab.offsets.copy()), backbone, vocab)


def _mlp_scores(layers, flat: np.ndarray) -> np.ndarray:
    h = flat
    for W, b in layers[:-1]:
        h = np.maximum(h @ W.T + b, 0.0)
    W, b = layers[-1]
    return (h @ W.T + b)[:, 0]


def scores_from_embedded(backbone: BackboneParams, emb: np.ndarray, linear_term) -> np.ndarray:
    """Pre-sigmoid scores for a batch of already-gathered embedding stacks.

    emb has shape (B, m, d); linear_term is the bias-plus-linear part, scalar
    or (B,). Raises NonFiniteError naming the stage that went non-finite.
    """
    total = emb.sum(axis=1)
    pair = 0.5 * ((total * total).sum(axis=-1) - (emb * emb).sum(axis=(-2, -1)))
    z = linear_term + pair
    if backbone.kind == DEEPFM:
        z = z + _mlp_scores(backbone.layers, emb.reshape(emb.shape[0], -1))
    if not np.isfinite(z).all():
        for stage, part in (
            ("embedding", emb),
            ("linear", np.asarray(linear_term)),
            ("interaction", pair),
        ):
            if not np.isfinite(part).all():
                raise NonFiniteError(f"non-finite value in {stage} stage")
        raise NonFiniteError("non-finite value in mlp stage")
    return z


def raw_scores(values: np.ndarray, backbone: BackboneParams, ids: np.ndarray) -> np.ndarray:
    linear = backbone.bias + backbone.linear[ids].sum(axis=1)
    return scores_from_embedded(backbone, values[ids], linear)


def clamp_probability(p):
    return np.clip(p, EPS, 1.0 - EPS)


def predict_proba(model: Model, ids_matrix: np.ndarray, batch_size: int = 8192) -> np.ndarray:
    """Clamped click probabilities for a matrix of encoded instances."""
    return predict_proba_values(model.embedding.values, model.backbone, ids_matrix, batch_size)


def predict_proba_values(values, backbone, ids_matrix, batch_size: int = 8192) -> np.ndarray:
    out = np.empty(ids_matrix.shape[0])
    for start in range(0, ids_matrix.shape[0], batch_size):
        chunk = ids_matrix[start : start + batch_size]
        out[start : start + chunk.shape[0]] = clamp_probability(
            expit(raw_scores(values, backbone, chunk))
        )
    return out


def embed_lookup(model: Model, instance: Instance) -> np.ndarray:
    """Copy of the m active embedding rows, shape (m, d)."""
    ids = np.asarray(instance.feature_ids)
    off = model.embedding.offsets
    if ids.shape != (model.embedding.field_count,):
        raise ValueError("instance has the wrong number of fields")
    if (ids < off[:-1]).any() or (ids >= off[1:]).any():
        raise ValueError("feature id outside its field's block")
    return model.embedding.values[ids].copy()


def forward(model: Model, instance: Instance, mask: PruneMask | None = None, padding=None) -> float:
    """Clamped click probability for one instance.

    With a mask, the masked coordinates of the active rows are replaced
    before scoring: by zero (padding="zero") or by the field's codebook row
    (padding=a Codebook). An empty mask reproduces the unmasked forward
    bit for bit.
    """
    emb = embed_lookup(model, instance)
    ids = np.asarray(instance.feature_ids)
    if mask is not None:
        if padding is None:
            raise ValueError("padding mode required when a mask is given")
        emb = np.where(mask.dense()[ids], _resolve_padding(padding), emb)
    linear = model.backbone.bias + model.backbone.linear[ids].sum()
    z = scores_from_embedded(model.backbone, emb[None], linear)
    return float(clamp_probability(expit(z))[0])


def _resolve_padding(padding):
    """Replacement values for masked coordinates: 0.0 for "zero" padding,
    the (m, d) codebook rows for codebook padding."""
    if isinstance(padding, Codebook):
        return padding.values
    if padding == "zero":
        return 0.0
    raise ValueError('padding must be "zero" or a Codebook')


def log_loss(prediction, label):
    """Binary cross entropy with predictions clamped to [EPS, 1-EPS].
    Elementwise; returns a float for scalar inputs."""
    p = clamp_probability(np.asarray(prediction, dtype=np.float64))
    y = np.asarray(label, dtype=np.float64)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


@dataclass
class Gradients:
    embedding: np.ndarray
    linear: np.ndarray
    bias: float
    layers: list


def _batch_gradients(values, backbone, ids, labels, scale=None):
    """Mean loss and summed-then-scaled gradients for one mini-batch.

    scale defaults to 1/B so gradients match the mean loss; pass 1.0 for a
    single instance to get that instance's own gradient.
    """
    B, m = ids.shape
    d = values.shape[1]
    if scale is None:
        scale = 1.0 / B
    emb = values[ids]
    linear = backbone.bias + backbone.linear[ids].sum(axis=1)
    total = emb.sum(axis=1)
    pair = 0.5 * ((total * total).sum(axis=-1) - (emb * emb).sum(axis=(-2, -1)))
    z = linear + pair

    acts = []
    if backbone.kind == DEEPFM:
        h = emb.reshape(B, m * d)
        for W, b in backbone.layers[:-1]:
            pre = h @ W.T + b
            acts.append((h, pre))
            h = np.maximum(pre, 0.0)
        W, b = backbone.layers[-1]
        acts.append((h, None))
        z = z + (h @ W.T + b)[:, 0]

    p = expit(z)
    y = labels.astype(np.float64)
    loss = float(np.mean(log_loss(p, y)))
    dz = scale * (p - y)

    grad_bias = float(dz.sum())
    grad_linear = np.zeros_like(backbone.linear)
    np.add.at(grad_linear, ids.ravel(), np.repeat(dz, m))

    demb = dz[:, None, None] * (total[:, None, :] - emb)

    grad_layers = []
    if backbone.kind == DEEPFM:
        W, _ = backbone.layers[-1]
        h_last = acts[-1][0]
        dout = dz[:, None]
        grad_layers.append((dout.T @ h_last, dout.sum(axis=0)))
        dh = dout @ W
        for (h_in, pre), (W, _) in zip(acts[-2::-1], backbone.layers[-2::-1]):
            da = dh * (pre > 0)
            grad_layers.append((da.T @ h_in, da.sum(axis=0)))
            dh = da @ W
        grad_layers.reverse()
        demb = demb + dh.reshape(B, m, d)

    grad_values = np.zeros_like(values)
    np.add.at(grad_values, ids.ravel(), demb.reshape(-1, d))
    return loss, Gradients(grad_values, grad_linear, grad_bias, grad_layers)


def backward(model: Model, instance: Instance) -> Gradients:
    """Exact analytic gradient of this instance's log loss with respect to
    every parameter. Embedding rows the instance does not touch come back
    with zero gradient."""
    embed_lookup(model, instance)  # range check
    ids = np.asarray(instance.feature_ids)[None, :]
    labels = np.array([instance.label])
    _, grads = _batch_gradients(
        model.embedding.values, model.backbone, ids, labels, scale=1.0
    )
    return grads


def train(
    dataset,
    config: TrainConfig,
    init: Model | None = None,
    mask: PruneMask | None = None,
    padding=None,
    log_fn=None,
) -> Model:
    """Mini-batch Adam on the log loss. Deterministic for a fixed config.

    With a mask, the masked embedding coordinates are pinned to their padding
    values (zero or the codebook row) before the first step and their
    gradients are zeroed, so they never move. The input model is not
    modified; a trained copy is returned.
    """
    model = copy.deepcopy(init) if init is not None else init_model(dataset.vocab, config)
    values = model.embedding.values
    backbone = model.backbone
    n, d = values.shape

    flags = None
    if mask is not None:
        if mask.shape != (n, d):
            raise ValueError("mask shape does not match the embedding table")
        flags = mask.dense()
        replacement = _resolve_padding(padding)
        if isinstance(replacement, np.ndarray):
            replacement = replacement[dataset.vocab.feature_fields]
            values[flags] = replacement[flags]
        else:
            values[flags] = replacement

    params = [values, backbone.linear, np.array([backbone.bias])]
    params.extend(p for pair in backbone.layers for p in pair)
    moment1 = [np.zeros_like(p) for p in params]
    moment2 = [np.zeros_like(p) for p in params]

    shuffle_rng = np.random.default_rng((config.seed, 1))
    step = 0
    count = len(dataset)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(count)
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, count, config.batch_size)):
            take = order[start : start + config.batch_size]
            try:
                loss, grads = _batch_gradients(
                    values, backbone, dataset.ids[take], dataset.labels[take]
                )
            except NonFiniteError:
                loss = math.inf
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {batch_index}"
                )
            if flags is not None:
                grads.embedding[flags] = 0.0
            grad_list = [grads.embedding, grads.linear, np.array([grads.bias])]
            grad_list.extend(g for pair in grads.layers for g in pair)
            step += 1
            correct1 = 1.0 - config.beta1 ** step
            correct2 = 1.0 - config.beta2 ** step
            for p, g, m1, m2 in zip(params, grad_list, moment1, moment2):
                m1 *= config.beta1
                m1 += (1.0 - config.beta1) * g
                m2 *= config.beta2
                m2 += (1.0 - config.beta2) * (g * g)
                p -= config.learning_rate * (m1 / correct1) / (
                    np.sqrt(m2 / correct2) + config.adam_eps
                )
            backbone.bias = float(params[2][0])
            epoch_loss += loss * take.shape[0]
        if log_fn is not None:
            log_fn(epoch, epoch_loss / count)
    return model


def model_to_bytes(model: Model) -> bytes:
    emb, backbone = model.embedding, model.backbone
    w = ser.ByteWriter()
    w.u8(_BACKBONE_TAGS[backbone.kind])
    w.u64(emb.field_count)
    w.u64(emb.n)
    w.u64(emb.d)
    w.array(emb.offsets.astype("<u8"))
    w.array(emb.values.astype("<f8"))
    w.array(backbone.linear.astype("<f8"))
    w.f64(backbone.bias)
    w.u8(len(backbone.layers))
    for W, b in backbone.layers:
        w.u64(W.shape[0])
        w.u64(W.shape[1])
        w.array(W.astype("<f8"))
        w.array(b.astype("<f8"))
    if model.mask is not None:
        w.section(ser.SECTION_MASK, model.mask.section_payload())
    if model.codebook is not None:
        w.section(ser.SECTION_CODEBOOK, codebook_section_payload(model.codebook))
    return ser.seal(w.getvalue())


def model_from_bytes(data: bytes, vocab: Vocabulary | None = None) -> Model:
    r = ser.unseal(data)
    tag = r.u8()
    if tag not in _TAG_BACKBONES:
        raise ser.CheckpointError(f"file does not hold a model (kind tag {tag})")
    kind = _TAG_BACKBONES[tag]
    m, n, d = r.u64(), r.u64(), r.u64()
    offsets = np.frombuffer(r.take(8 * (m + 1)), "<u8").astype(np.int64)
    values = np.frombuffer(r.take(8 * n * d), "<f8").reshape(n, d).copy()
    linear = np.frombuffer(r.take(8 * n), "<f8").copy()
    bias = r.f64()
    layers = []
    for _ in range(r.u8()):
        rows, cols = r.u64(), r.u64()
        W = np.frombuffer(r.take(8 * rows * cols), "<f8").reshape(rows, cols).copy()
        b = np.frombuffer(r.take(8 * rows), "<f8").copy()
        layers.append((W, b))
    mask = codebook = None
    for sec_tag, payload in r.sections():
        if sec_tag == ser.SECTION_MASK:
            mask = PruneMask.from_section(payload)
        elif sec_tag == ser.SECTION_CODEBOOK:
            codebook = codebook_from_section(payload, m, d)
    if vocab is not None and (vocab.n != n or not np.array_equal(vocab.offsets, offsets)):
        raise ser.CheckpointError("vocabulary does not match this checkpoint")
    return Model(
        EmbeddingTable(values, offsets),
        BackboneParams(kind, bias, linear, layers),
        vocab,
        codebook,
        mask,
    )


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path, vocab: Vocabulary | None = None) -> Model:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read(), vocab)
