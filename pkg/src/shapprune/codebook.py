"""Field-aware codebook: one replacement row per field for pruned entries.

When pruning empties a coordinate (i, c), scoring can either read zero there
or fall back to a shared per-field value C[j, c]. The codebook that minimizes
the expected squared perturbation of the embedding sum entering the pairwise
interaction, with instances drawn by feature frequency, is the closed-form
frequency-weighted mean of each field's rows:

    C[j, :] = sum_i p_i * E[i, :] / sum_i p_i   over features i of field j

because each field's residual term can be driven to zero independently and
the per-column quadratic is positive definite. compute_codebook evaluates
exactly that; codebook_objective is a Monte Carlo estimate of the objective
itself, kept as a cross-check oracle for tests.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import serialization as ser


@dataclass(frozen=True)
class Codebook:
    """values[j, :] replaces pruned coordinates of field j's features.
    frequency_fingerprint ties the codebook to the frequency table that
    produced it."""

    values: np.ndarray
    frequency_fingerprint: int = 0


def fields_from_offsets(offsets: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(offsets.shape[0] - 1), np.diff(offsets))


def compute_codebook(model, dataset) -> Codebook:
    """Closed-form codebook from a trained model and the frequency table of
    the dataset it will be pruned against."""
    values = model.embedding.values
    offsets = model.embedding.offsets
    freq = dataset.frequencies.astype(np.float64)
    m, d = offsets.shape[0] - 1, values.shape[1]
    out = np.empty((m, d))
    for j in range(m):
        lo, hi = int(offsets[j]), int(offsets[j + 1])
        weight = freq[lo:hi]
        total = weight.sum()
        if total == 0:
            name = dataset.vocab.schema.names[j] if dataset.vocab else str(j)
            raise ValueError(f"field {name!r} has zero total frequency")
        out[j] = weight @ values[lo:hi] / total
    crc = zlib.crc32(np.ascontiguousarray(dataset.frequencies, dtype="<i8").tobytes())
    return Codebook(out, crc)


class ImputedEmbedding:
    """Row accessor over a pruned table with padding filled in.

    Materializes the effective table once; row(i) and rows(ids) read from it
    bit for bit as the pruned scorer does.
    """

    def __init__(self, dense: np.ndarray):
        self.dense = dense

    def row(self, feature_id: int) -> np.ndarray:
        return self.dense[feature_id]

    def rows(self, ids: np.ndarray) -> np.ndarray:
        return self.dense[ids]


def impute(table, mask, padding) -> ImputedEmbedding:
    """Effective embedding view: kept coordinates keep their stored values,
    masked ones read zero or the field's codebook row.

    table needs .values (n, d) and .offsets (m+1); mask is a PruneMask;
    padding is "zero" or a Codebook.
    """
    flags = mask.dense()
    dense = table.values.copy()
    if isinstance(padding, Codebook):
        expanded = padding.values[fields_from_offsets(table.offsets)]
        dense[flags] = expanded[flags]
    elif padding == "zero":
        dense[flags] = 0.0
    else:
        raise ValueError('padding must be "zero" or a Codebook')
    return ImputedEmbedding(dense)


def codebook_objective(
    model,
    dataset,
    codebook: Codebook,
    budget_fraction: float,
    n_samples: int = 10_000,
    seed: int = 0,
) -> float:
    """Monte Carlo estimate of the expected squared perturbation of the
    active-embedding sum when a uniformly random coordinate set of size
    round(budget_fraction * n * d) is replaced by the codebook.

    The sample stream depends only on (dataset, budget_fraction, n_samples,
    seed), so candidates evaluated with identical arguments share the same
    draws. Test oracle; not used by the pruning path.
    """
    values = model.embedding.values
    offsets = model.embedding.offsets
    n, d = values.shape
    total = n * d
    budget = int(np.rint(budget_fraction * total))
    if budget == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(dataset), size=n_samples)
    # one uniform size-budget coordinate subset per sample
    masked = rng.random((n_samples, total)).argsort(axis=1)[:, :budget]
    member = np.zeros((n_samples, total), bool)
    member[np.repeat(np.arange(n_samples), budget), masked.ravel()] = True

    ids = dataset.ids[picks]  # (S, m)
    flat = ids[:, :, None] * d + np.arange(d)[None, None, :]  # (S, m, d)
    hit = member[np.arange(n_samples)[:, None, None], flat]
    delta = (values[ids] - codebook.values[None, :, :]) * hit
    shift = delta.sum(axis=1)
    return float(np.mean((shift * shift).sum(axis=1)))


def codebook_section_payload(codebook: Codebook) -> bytes:
    w = ser.ByteWriter()
    w.u64(codebook.values.shape[0])
    w.u64(codebook.values.shape[1])
    w.u32(codebook.frequency_fingerprint)
    w.array(codebook.values.astype("<f8"))
    return w.getvalue()


def codebook_from_section(payload: bytes, m: int, d: int) -> Codebook:
    r = ser.ByteReader(payload)
    rows, cols = r.u64(), r.u64()
    if (rows, cols) != (m, d):
        raise ser.CheckpointError("codebook shape does not match the model")
    crc = r.u32()
    values = np.frombuffer(r.take(8 * m * d), "<f8").reshape(m, d).copy()
    return Codebook(values, crc)
