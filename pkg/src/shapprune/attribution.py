"""Per-parameter importance scores for the embedding table.

The Shapley scorer treats each column of each field's active embedding row as
a player in a cooperative game per instance: removing a player zeroes that
coordinate before scoring, and the payoff of a removal set is the resulting
increase in that instance's log loss. Per-instance attributions over the
m * d field-level players are scattered onto the (feature id, column)
coordinates that were active and averaged over the dataset, so a table entry
earns credit exactly when its feature participates. Features that never occur
in the dataset keep a bitwise-zero row.

The sampling estimator walks one uniformly random removal order per instance
per pass and accumulates marginal loss increases along the walk. Each visit
draws its permutation from a counter-based generator keyed by (seed, pass,
instance index), so results do not depend on thread count or visit order, and
every visit costs exactly m * d + 1 forward evaluations, tallied in the
returned metadata.

An exact enumeration oracle covers small instances (m * d <= 22), along with
two cheap baselines: absolute weight magnitude, and a first-order estimate
from the average gradient.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import serialization as ser
from .data import Dataset, Instance
from .model import (
    Model,
    _batch_gradients,
    clamp_probability,
    embed_lookup,
    log_loss,
    scores_from_embedded,
)

SHAPLEY = "shapley"
MAGNITUDE = "magnitude"
TAYLOR = "taylor"
METHODS = (SHAPLEY, MAGNITUDE, TAYLOR)

_METHOD_CODES = {SHAPLEY: 1, MAGNITUDE: 2, TAYLOR: 3}
_CODE_METHODS = {code: name for name, code in _METHOD_CODES.items()}

EXACT_PLAYER_LIMIT = 22

# Visits are processed in fixed-size blocks with a private accumulator each,
# merged in block order. The block partition never depends on the number of
# workers, which is what makes the estimate bit-identical for any thread
# count.
_BLOCK_VISITS = 1024


@dataclass
class AttributionScores:
    """(n, d) importance matrix plus the provenance needed to trust it."""

    values: np.ndarray
    method: str
    seed: int = 0
    passes: int = 0
    forward_count: int = 0
    dataset_fingerprint: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown scoring method {self.method!r}")
        if not np.isfinite(self.values).all():
            raise ValueError("scores must be finite")

    def to_bytes(self) -> bytes:
        w = ser.ByteWriter()
        w.u8(ser.TAG_SCORES)
        w.u64(self.values.shape[0])
        w.u64(self.values.shape[1])
        w.section(ser.SECTION_SCORES, np.ascontiguousarray(self.values, "<f8").tobytes())
        meta = ser.ByteWriter()
        meta.u8(_METHOD_CODES[self.method])
        meta.u64(self.seed)
        meta.u64(self.passes)
        meta.u64(self.forward_count)
        meta.u32(self.dataset_fingerprint)
        w.section(ser.SECTION_METADATA, meta.getvalue())
        return ser.seal(w.getvalue())

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttributionScores":
        r = ser.unseal(data)
        ser.expect_kind(r, ser.TAG_SCORES, "a score matrix")
        n, d = r.u64(), r.u64()
        values = method = None
        seed = passes = count = fingerprint = 0
        for tag, payload in r.sections():
            if tag == ser.SECTION_SCORES:
                values = np.frombuffer(payload, "<f8").reshape(n, d).copy()
            elif tag == ser.SECTION_METADATA:
                meta = ser.ByteReader(payload)
                code = meta.u8()
                if code not in _CODE_METHODS:
                    raise ser.CheckpointError(f"unknown scoring method code {code}")
                method = _CODE_METHODS[code]
                seed, passes, count = meta.u64(), meta.u64(), meta.u64()
                fingerprint = meta.u32()
        if values is None or method is None:
            raise ser.CheckpointError("score file is missing a required section")
        return cls(values, method, seed, passes, count, fingerprint)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "AttributionScores":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class RemovalState:
    """Which (field, column) coordinates of the current instance are removed."""

    flags: np.ndarray

    @classmethod
    def empty(cls, field_count: int, dim: int) -> "RemovalState":
        return cls(np.zeros((field_count, dim), bool))

    def add(self, field: int, column: int) -> None:
        self.flags[field, column] = True

    def copy(self) -> "RemovalState":
        return RemovalState(self.flags.copy())


def _instance_losses(model: Model, ids: np.ndarray, label: int, emb_stack: np.ndarray) -> np.ndarray:
    linear = model.backbone.bias + model.backbone.linear[ids].sum()
    z = scores_from_embedded(model.backbone, emb_stack, linear)
    p = clamp_probability(expit(z))
    return log_loss(p, float(label))


def removal_loss_delta(
    model: Model, instance: Instance, removal: RemovalState, base_loss: float | None = None
) -> float:
    """Loss increase from zeroing the removed coordinates of this instance's
    active rows: loss(masked) - loss(unmasked). Empty removal gives exactly 0."""
    emb = embed_lookup(model, instance)
    ids = np.asarray(instance.feature_ids)
    if base_loss is None:
        base_loss = float(_instance_losses(model, ids, instance.label, emb[None])[0])
    masked = np.where(removal.flags, 0.0, emb)
    loss = float(_instance_losses(model, ids, instance.label, masked[None])[0])
    return loss - base_loss


def _check_compatible(model: Model, dataset: Dataset) -> None:
    if model.embedding.n != dataset.vocab.n or not np.array_equal(
        model.embedding.offsets, dataset.vocab.offsets
    ):
        raise ValueError("model and dataset do not share a vocabulary layout")


def _visit_blocks(total_visits: int):
    for start in range(0, total_visits, _BLOCK_VISITS):
        yield start, min(start + _BLOCK_VISITS, total_visits)


def _run_block(model: Model, dataset: Dataset, seed: int, span) -> np.ndarray:
    values = model.embedding.values
    backbone = model.backbone
    n, d = values.shape
    m = dataset.ids.shape[1]
    md = m * d
    count = len(dataset)
    phi = np.zeros((n, d))
    thresholds = np.arange(-1, md)[:, None, None]
    for visit in range(*span):
        pass_idx, inst_idx = divmod(visit, count)
        rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, pass_idx, inst_idx]))
        perm = rng.permutation(md)
        ids = dataset.ids[inst_idx]
        emb = values[ids]
        # position[j, c] = step at which that coordinate is removed; row k of
        # the stack has every coordinate with position < k already zeroed, so
        # row 0 is the untouched instance and row md the fully removed one.
        position = np.empty(md, np.int64)
        position[perm] = np.arange(md)
        stack = emb[None] * (position.reshape(m, d)[None] > thresholds)
        linear = backbone.bias + backbone.linear[ids].sum()
        z = scores_from_embedded(backbone, stack, linear)
        p = clamp_probability(expit(z))
        losses = log_loss(p, float(dataset.labels[inst_idx]))
        marginals = np.diff(losses)
        np.add.at(phi, (ids[perm // d], perm % d), marginals)
    return phi


def estimate_shapley(
    model: Model, dataset: Dataset, passes: int = 1, seed: int = 0, threads: int = 1
) -> AttributionScores:
    """Sampled per-parameter Shapley attribution over the whole dataset.

    Runs `passes` removal walks per instance and averages the scattered
    marginals over len(dataset) * passes walks. Identical inputs give
    identical scores for any `threads`; the forward counter in the result is
    always (m * d + 1) * len(dataset) * passes.
    """
    _check_compatible(model, dataset)
    if passes < 1:
        raise ValueError("passes must be at least 1")
    if threads < 1:
        raise ValueError("threads must be at least 1")
    count = len(dataset)
    md = dataset.ids.shape[1] * model.embedding.d
    total_visits = passes * count
    spans = list(_visit_blocks(total_visits))
    if threads == 1:
        parts = [_run_block(model, dataset, seed, span) for span in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda span: _run_block(model, dataset, seed, span), spans))
    phi = np.zeros((model.embedding.n, model.embedding.d))
    for part in parts:  # fixed merge order
        phi += part
    phi /= total_visits
    return AttributionScores(
        phi,
        SHAPLEY,
        seed=seed,
        passes=passes,
        forward_count=(md + 1) * total_visits,
        dataset_fingerprint=dataset.fingerprint(),
    )


def _subset_weights(md: int) -> np.ndarray:
    # weight of a marginal contribution on top of a size-s removal set
    return np.array([1.0 / (md * math.comb(md - 1, s)) for s in range(md)])


def exact_shapley_local(model: Model, instance: Instance) -> np.ndarray:
    """Exact field-level Shapley values of one instance, shape (m, d), by
    full subset enumeration. Refuses instances with m * d > 22."""
    emb = embed_lookup(model, instance)
    ids = np.asarray(instance.feature_ids)
    m, d = emb.shape
    md = m * d
    if md > EXACT_PLAYER_LIMIT:
        raise ValueError(
            f"instance too large for the exact oracle (m*d = {md} > {EXACT_PLAYER_LIMIT})"
        )
    total = 1 << md
    u = np.empty(total)
    pop = np.empty(total, np.uint8)
    chunk = 1 << 14
    bits_template = np.arange(md)
    for start in range(0, total, chunk):
        ints = np.arange(start, min(start + chunk, total), dtype=np.int64)
        removed = ((ints[:, None] >> bits_template) & 1).astype(bool)
        pop[start : start + ints.shape[0]] = removed.sum(axis=1)
        stack = emb[None] * ~removed.reshape(-1, m, d)
        u[start : start + ints.shape[0]] = _instance_losses(model, ids, instance.label, stack)
    u -= u[0]
    weights = _subset_weights(md)
    indices = np.arange(total, dtype=np.int64)
    phi = np.empty(md)
    for p in range(md):
        without = indices[(indices >> p) & 1 == 0]
        phi[p] = np.sum(weights[pop[without]] * (u[without + (1 << p)] - u[without]))
    return phi.reshape(m, d)


def exact_shapley_global(model: Model, dataset: Dataset) -> AttributionScores:
    """Dataset-averaged exact attribution: per-instance exact values scattered
    onto active feature rows and divided by len(dataset). Duplicate instances
    are evaluated once and reused."""
    _check_compatible(model, dataset)
    n, d = model.embedding.values.shape
    phi = np.zeros((n, d))
    cache: dict = {}
    forwards = 0
    for k in range(len(dataset)):
        key = (dataset.ids[k].tobytes(), int(dataset.labels[k]))
        local = cache.get(key)
        if local is None:
            local = exact_shapley_local(model, dataset.instance(k))
            md = local.size
            forwards += 1 << md
            cache[key] = local
        phi[dataset.ids[k]] += local
    phi /= len(dataset)
    return AttributionScores(
        phi,
        SHAPLEY,
        seed=0,
        passes=0,
        forward_count=forwards,
        dataset_fingerprint=dataset.fingerprint(),
    )


def score_magnitude(model: Model) -> AttributionScores:
    """Absolute value of each stored embedding entry. No data involved."""
    return AttributionScores(np.abs(model.embedding.values), MAGNITUDE)


def score_taylor(model: Model, dataset: Dataset, batch_size: int = 8192) -> AttributionScores:
    """First-order importance: |entry * average gradient of the loss at that
    entry| over the dataset."""
    _check_compatible(model, dataset)
    grad_sum = np.zeros_like(model.embedding.values)
    for start in range(0, len(dataset), batch_size):
        ids = dataset.ids[start : start + batch_size]
        labels = dataset.labels[start : start + batch_size]
        _, grads = _batch_gradients(
            model.embedding.values, model.backbone, ids, labels, scale=1.0
        )
        grad_sum += grads.embedding
    scores = np.abs(model.embedding.values * (grad_sum / len(dataset)))
    return AttributionScores(
        scores,
        TAYLOR,
        passes=1,
        forward_count=len(dataset),
        dataset_fingerprint=dataset.fingerprint(),
    )
