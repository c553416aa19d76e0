"""One-shot embedding-table pruning to an exact parameter budget.

Given an (n, d) score matrix, prune(model, scores, t) empties the
round(t * n * d) lowest-scoring coordinates (ties: lower feature frequency
first, then larger row index, then larger column index) and stores the
survivors in CSR form. Only the embedding table is pruned; linear weights,
bias, and MLP parameters ride along untouched. Scoring a pruned model reads
zero or the field codebook row at emptied coordinates and is bit-identical
to scoring the dense model through an imputed view of the same table.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import serialization as ser
from .codebook import Codebook, codebook_from_section, codebook_section_payload, impute
from .data import Dataset
from .model import (
    BackboneParams,
    EmbeddingTable,
    Model,
    PruneMask,
    log_loss,
    model_to_bytes,
    predict_proba_values,
)

ZERO = "zero"
CODEBOOK = "codebook"
_PAD_CODES = {ZERO: 0, CODEBOOK: 1}
_CODE_PADS = {code: name for name, code in _PAD_CODES.items()}


def parameter_budget(sparsity: float, n: int, d: int) -> int:
    """Number of coordinates to prune: round(t * n * d), ties to even."""
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    return int(np.rint(sparsity * n * d))


@dataclass
class PrunedModel:
    """Pruned checkpoint: kept embedding entries in CSR plus the backbone.

    col_idx[row_ptr[i]:row_ptr[i+1]] are the kept columns of feature i in
    strictly increasing order, with their values in csr_values at the same
    slots. padding names what pruned coordinates read at score time.
    """

    row_ptr: np.ndarray
    col_idx: np.ndarray
    csr_values: np.ndarray
    offsets: np.ndarray
    dim: int
    backbone: BackboneParams
    padding: str
    codebook: Codebook | None
    sparsity: float

    def __post_init__(self):
        self._effective = None
        if self.padding == CODEBOOK and self.codebook is None:
            raise ValueError("codebook padding requires a codebook")

    @property
    def n(self) -> int:
        return int(self.row_ptr.shape[0]) - 1

    @property
    def kept_count(self) -> int:
        return int(self.row_ptr[-1])

    def prune_mask(self) -> PruneMask:
        flags = np.ones((self.n, self.dim), bool)
        rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        flags[rows, self.col_idx] = False
        return PruneMask.from_dense(flags)

    def effective_values(self) -> np.ndarray:
        """Dense (n, d) table the scorer actually reads: kept values in
        place, padding everywhere else."""
        if self._effective is None:
            stored = np.zeros((self.n, self.dim))
            rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
            stored[rows, self.col_idx] = self.csr_values
            table = EmbeddingTable(stored, self.offsets)
            pad = self.codebook if self.padding == CODEBOOK else ZERO
            self._effective = impute(table, self.prune_mask(), pad).dense
        return self._effective

    def to_bytes(self) -> bytes:
        w = ser.ByteWriter()
        w.u8(ser.TAG_PRUNED)
        w.u8(ser.TAG_MODEL_FM if self.backbone.kind == "fm" else ser.TAG_MODEL_DEEPFM)
        w.u64(self.offsets.shape[0] - 1)
        w.u64(self.n)
        w.u64(self.dim)
        w.array(self.offsets.astype("<u8"))
        w.u8(_PAD_CODES[self.padding])
        w.f64(self.sparsity)
        w.array(self.backbone.linear.astype("<f8"))
        w.f64(self.backbone.bias)
        w.u8(len(self.backbone.layers))
        for W, b in self.backbone.layers:
            w.u64(W.shape[0])
            w.u64(W.shape[1])
            w.array(W.astype("<f8"))
            w.array(b.astype("<f8"))
        csr = ser.ByteWriter()
        csr.array(self.row_ptr.astype("<u8"))
        csr.array(self.col_idx.astype("<u4"))
        csr.array(self.csr_values.astype("<f8"))
        w.section(ser.SECTION_CSR, csr.getvalue())
        if self.codebook is not None:
            w.section(ser.SECTION_CODEBOOK, codebook_section_payload(self.codebook))
        return ser.seal(w.getvalue())

    @classmethod
    def from_bytes(cls, data: bytes) -> "PrunedModel":
        r = ser.unseal(data)
        ser.expect_kind(r, ser.TAG_PRUNED, "a pruned model")
        backbone_tag = r.u8()
        kind = "fm" if backbone_tag == ser.TAG_MODEL_FM else "deepfm"
        m, n, d = r.u64(), r.u64(), r.u64()
        offsets = np.frombuffer(r.take(8 * (m + 1)), "<u8").astype(np.int64)
        padding = _CODE_PADS[r.u8()]
        sparsity = r.f64()
        linear = np.frombuffer(r.take(8 * n), "<f8").copy()
        bias = r.f64()
        layers = []
        for _ in range(r.u8()):
            rows, cols = r.u64(), r.u64()
            W = np.frombuffer(r.take(8 * rows * cols), "<f8").reshape(rows, cols).copy()
            b = np.frombuffer(r.take(8 * rows), "<f8").copy()
            layers.append((W, b))
        row_ptr = col_idx = values = codebook = None
        for tag, payload in r.sections():
            if tag == ser.SECTION_CSR:
                cr = ser.ByteReader(payload)
                row_ptr = np.frombuffer(cr.take(8 * (n + 1)), "<u8").astype(np.int64)
                kept = int(row_ptr[-1])
                col_idx = np.frombuffer(cr.take(4 * kept), "<u4").astype(np.int32)
                values = np.frombuffer(cr.take(8 * kept), "<f8").copy()
            elif tag == ser.SECTION_CODEBOOK:
                codebook = codebook_from_section(payload, m, d)
        if row_ptr is None:
            raise ser.CheckpointError("pruned model is missing its CSR section")
        backbone = BackboneParams(kind, bias, linear, layers)
        return cls(row_ptr, col_idx, values, offsets, d, backbone, padding, codebook, sparsity)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())


def load_pruned(path) -> PrunedModel:
    with open(path, "rb") as fh:
        return PrunedModel.from_bytes(fh.read())


def prune(
    model: Model,
    scores,
    sparsity: float,
    padding: str = ZERO,
    codebook: Codebook | None = None,
    frequencies: np.ndarray | None = None,
) -> PrunedModel:
    """Empty the round(sparsity * n * d) lowest-scoring embedding coordinates.

    frequencies (per feature id) only breaks score ties: lower-frequency
    features go first, then larger row, then larger column, making the kept
    set a deterministic function of the inputs. Kept values are copied bit
    for bit. Any monotone transform of the scores yields the same mask.
    """
    values = model.embedding.values
    n, d = values.shape
    score_matrix = np.asarray(scores.values if hasattr(scores, "values") else scores)
    if score_matrix.shape != (n, d):
        raise ValueError("score matrix shape does not match the embedding table")
    if padding not in _PAD_CODES:
        raise ValueError(f'padding must be "{ZERO}" or "{CODEBOOK}"')
    if padding == CODEBOOK and codebook is None:
        raise ValueError("codebook padding requires a codebook")
    if frequencies is None:
        frequencies = np.zeros(n, np.int64)
    budget = parameter_budget(sparsity, n, d)

    flat_scores = score_matrix.ravel()
    rows = np.repeat(np.arange(n), d)
    cols = np.tile(np.arange(d), n)
    order = np.lexsort((-cols, -rows, np.repeat(frequencies, d), flat_scores))
    pruned_flat = order[:budget]
    flags = np.zeros(n * d, bool)
    flags[pruned_flat] = True
    if budget and budget < n * d:
        # every pruned score sits at or below every kept score
        assert flat_scores[pruned_flat].max() <= flat_scores[~flags].min()
    flags = flags.reshape(n, d)

    kept = ~flags
    row_ptr = np.zeros(n + 1, np.int64)
    np.cumsum(kept.sum(axis=1), out=row_ptr[1:])
    kept_rows, kept_cols = np.nonzero(kept)
    return PrunedModel(
        row_ptr,
        kept_cols.astype(np.int32),
        values[kept_rows, kept_cols].copy(),
        model.embedding.offsets.copy(),
        d,
        model.backbone,
        padding,
        codebook if padding == CODEBOOK else None,
        sparsity,
    )


def auc_rank(labels: np.ndarray, predictions: np.ndarray):
    """Area under the ROC curve via tie-averaged ranks, or None when only
    one class is present."""
    labels = np.asarray(labels)
    positives = int(labels.sum())
    negatives = labels.shape[0] - positives
    if positives == 0 or negatives == 0:
        return None
    ranks = rankdata(predictions, method="average")
    return float(
        (ranks[labels == 1].sum() - positives * (positives + 1) / 2.0)
        / (positives * negatives)
    )


@dataclass(frozen=True)
class EvalReport:
    logloss: float
    auc: float | None
    auc_defined: bool
    count: int
    storage_bytes: int


def evaluate(target, dataset: Dataset) -> EvalReport:
    """Log loss, AUC, and serialized size of a dense or pruned model on a
    dataset."""
    if isinstance(target, PrunedModel):
        values = target.effective_values()
        backbone = target.backbone
        blob = target.to_bytes()
    else:
        values = target.embedding.values
        backbone = target.backbone
        blob = model_to_bytes(target)
    predictions = predict_proba_values(values, backbone, dataset.ids)
    losses = log_loss(predictions, dataset.labels.astype(np.float64))
    auc = auc_rank(dataset.labels, predictions)
    return EvalReport(
        logloss=float(np.mean(losses)),
        auc=auc,
        auc_defined=auc is not None,
        count=len(dataset),
        storage_bytes=len(blob),
    )


def prune_curve(
    model: Model,
    scores,
    sparsities,
    dataset: Dataset,
    padding: str = ZERO,
    codebook: Codebook | None = None,
    frequencies: np.ndarray | None = None,
) -> list:
    """Evaluate a strictly increasing sparsity grid. Returns one row per t
    with keys sparsity, auc, logloss, kept_params, file_bytes."""
    grid = list(sparsities)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("sparsity grid must be strictly increasing")
    rows = []
    for t in grid:
        pruned = prune(model, scores, t, padding, codebook, frequencies)
        report = evaluate(pruned, dataset)
        rows.append(
            {
                "sparsity": t,
                "auc": report.auc,
                "logloss": report.logloss,
                "kept_params": pruned.kept_count,
                "file_bytes": report.storage_bytes,
            }
        )
    return rows


CURVE_HEADER = ("sparsity", "auc", "logloss", "kept_params", "file_bytes")


def write_curve_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for row in rows:
            auc = row["auc"]
            writer.writerow(
                [
                    f"{row['sparsity']:g}",
                    "nan" if auc is None else f"{auc:.6f}",
                    f"{row['logloss']:.6f}",
                    row["kept_params"],
                    row["file_bytes"],
                ]
            )


def frequency_bucket_report(pruned: PrunedModel, frequencies: np.ndarray, buckets: int = 3):
    """Mean kept dimensions per frequency bucket.

    Features are sorted by frequency and split into `buckets` near-equal
    groups, lowest first. Shows where the budget went."""
    kept_per_feature = np.diff(pruned.row_ptr)
    order = np.argsort(frequencies, kind="stable")
    out = []
    for chunk in np.array_split(order, buckets):
        out.append(
            {
                "features": int(chunk.shape[0]),
                "mean_kept_dims": float(kept_per_feature[chunk].mean()),
                "min_frequency": int(frequencies[chunk].min()),
                "max_frequency": int(frequencies[chunk].max()),
            }
        )
    return out
