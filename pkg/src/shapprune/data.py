"""Tabular CTR data: field schemas, vocabularies, encoded datasets.

Input rows are headerless CSV: column 0 is the binary label, columns 1..m
hold exactly one token per field (multi-valued fields are out of scope by
construction of this layout). Numeric fields are bucketed to log2 tokens
before any vocabulary lookup, so downstream code only ever sees categorical
ids. Every field always materializes an out-of-vocabulary id as its last
slot, even when no token maps to it.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import serialization as ser

CATEGORICAL = "categorical"
NUMERIC_BUCKETED = "numeric-bucketed"
FIELD_KINDS = (CATEGORICAL, NUMERIC_BUCKETED)

# Reserved token spellings. Angle brackets keep them out of the way of
# ordinary data tokens.
OOV_TOKEN = "<oov>"
MISSING_TOKEN = "<missing>"

_KIND_CODES = {CATEGORICAL: 0, NUMERIC_BUCKETED: 1}
_KIND_NAMES = {code: kind for kind, code in _KIND_CODES.items()}


class DataError(ValueError):
    """Malformed input rows or inconsistent dataset state."""


@dataclass(frozen=True)
class FieldSchema:
    """Names and kinds of the m input fields, in column order."""

    names: tuple[str, ...]
    kinds: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) == 0:
            raise DataError("schema needs at least one field")
        if len(self.names) != len(self.kinds):
            raise DataError("schema names and kinds differ in length")
        if len(set(self.names)) != len(self.names):
            raise DataError("duplicate field names in schema")
        for kind in self.kinds:
            if kind not in FIELD_KINDS:
                raise DataError(f"unknown field kind {kind!r}")

    @property
    def field_count(self) -> int:
        return len(self.names)

    @classmethod
    def categorical(cls, m: int) -> "FieldSchema":
        """All-categorical schema with generated names f0..f{m-1}."""
        return cls(tuple(f"f{j}" for j in range(m)), (CATEGORICAL,) * m)

    def save(self, path) -> None:
        doc = {"fields": [{"name": n, "kind": k} for n, k in zip(self.names, self.kinds)]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FieldSchema":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            fields = doc["fields"]
            names = tuple(f["name"] for f in fields)
            kinds = tuple(f["kind"] for f in fields)
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema file {path}") from exc
        return cls(names, kinds)


def bucketize_numeric(value) -> str:
    """Token for a raw numeric value: ceil(log2 x) above 2, the integer part
    at or below 2, a reserved token when missing."""
    if value is None:
        return MISSING_TOKEN
    x = float(value)
    if x > 2:
        return str(math.ceil(math.log2(x)))
    return str(int(x))


def _cell_token(kind: str, cell: str) -> str:
    if kind == NUMERIC_BUCKETED:
        if cell == "":
            return MISSING_TOKEN
        try:
            x = float(cell)
        except ValueError:
            # already-tokenized content (bucket labels, reserved tokens)
            # passes through to the vocabulary lookup untouched
            return cell
        return bucketize_numeric(x)
    if cell == "":
        return MISSING_TOKEN
    return cell


def _parse_label(cell: str, row_number: int) -> int:
    text = cell.strip()
    if text == "":
        raise DataError(f"row {row_number}: missing label")
    try:
        y = float(text)
    except ValueError:
        raise DataError(f"row {row_number}: label {cell!r} is not 0 or 1") from None
    if y not in (0.0, 1.0):
        raise DataError(f"row {row_number}: label {cell!r} is not 0 or 1")
    return int(y)


def _check_width(row, m: int, row_number: int) -> None:
    if len(row) != m + 1:
        raise DataError(
            f"row {row_number}: expected {m + 1} columns (label + {m} fields), got {len(row)}"
        )


@dataclass(frozen=True)
class Vocabulary:
    """Per-field token tables with globally unique feature ids.

    Field j owns the contiguous id block [offsets[j], offsets[j+1]); the last
    id of each block is that field's OOV id. Kept tokens are numbered in
    order of first appearance in the build data.
    """

    schema: FieldSchema
    tables: tuple[dict, ...]
    min_count: int

    @cached_property
    def offsets(self) -> np.ndarray:
        sizes = [len(t) + 1 for t in self.tables]
        return np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    @property
    def field_count(self) -> int:
        return self.schema.field_count

    @property
    def field_sizes(self) -> tuple[int, ...]:
        return tuple(len(t) + 1 for t in self.tables)

    @cached_property
    def feature_fields(self) -> np.ndarray:
        """(n,) array mapping each feature id to its field index."""
        return np.repeat(np.arange(self.field_count), np.diff(self.offsets))

    def oov_id(self, field: int) -> int:
        return int(self.offsets[field + 1]) - 1

    def encode_token(self, field: int, token: str) -> int:
        local = self.tables[field].get(token)
        if local is None:
            return self.oov_id(field)
        return int(self.offsets[field]) + local

    @cached_property
    def _reverse(self) -> tuple:
        return tuple(list(t.keys()) + [OOV_TOKEN] for t in self.tables)

    def token_of(self, feature_id: int) -> str:
        if not 0 <= feature_id < self.n:
            raise DataError(f"feature id {feature_id} out of range")
        field = int(self.feature_fields[feature_id])
        return self._reverse[field][feature_id - int(self.offsets[field])]

    def to_bytes(self) -> bytes:
        w = ser.ByteWriter()
        w.u8(ser.TAG_VOCABULARY)
        w.u64(self.min_count)
        w.u64(self.field_count)
        for name, kind, table in zip(self.schema.names, self.schema.kinds, self.tables):
            w.text(name)
            w.u8(_KIND_CODES[kind])
            w.u64(len(table))
            for token in table:  # insertion order == id order
                w.text(token)
        return ser.seal(w.getvalue())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Vocabulary":
        r = ser.unseal(data)
        ser.expect_kind(r, ser.TAG_VOCABULARY, "a vocabulary")
        min_count = r.u64()
        m = r.u64()
        names, kinds, tables = [], [], []
        for _ in range(m):
            names.append(r.text())
            code = r.u8()
            if code not in _KIND_NAMES:
                raise ser.CheckpointError(f"unknown field kind code {code}")
            kinds.append(_KIND_NAMES[code])
            count = r.u64()
            tables.append({r.text(): k for k in range(count)})
        return cls(FieldSchema(tuple(names), tuple(kinds)), tuple(tables), min_count)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def build_vocabulary(raw_rows, schema: FieldSchema, min_count: int = 0) -> Vocabulary:
    """Count tokens per field and assign ids to those with count >= min_count,
    in order of first appearance. Everything else encodes to the field's OOV id.
    """
    m = schema.field_count
    counters = [dict() for _ in range(m)]
    row_number = 0
    for row in raw_rows:
        row_number += 1
        _check_width(row, m, row_number)
        _parse_label(row[0], row_number)
        for j in range(m):
            token = _cell_token(schema.kinds[j], row[j + 1])
            counters[j][token] = counters[j].get(token, 0) + 1
    if row_number == 0:
        raise DataError("empty dataset")
    tables = []
    for j in range(m):
        kept = {}
        for token, count in counters[j].items():
            if count >= min_count:
                kept[token] = len(kept)
        tables.append(kept)
    return Vocabulary(schema, tuple(tables), min_count)


@dataclass(frozen=True)
class Instance:
    """One encoded row: a binary label and one active feature id per field."""

    label: int
    feature_ids: np.ndarray

    @property
    def field_count(self) -> int:
        return int(self.feature_ids.shape[0])


@dataclass(frozen=True)
class Dataset:
    """Encoded instances plus the per-feature frequency table.

    ids[k, j] is the active feature of field j in instance k. frequencies[i]
    counts appearances of feature i, so each field's block sums to len(self).
    """

    ids: np.ndarray
    labels: np.ndarray
    frequencies: np.ndarray
    vocab: Vocabulary

    def __post_init__(self):
        ids, labels = self.ids, self.labels
        off = self.vocab.offsets
        if ids.ndim != 2 or ids.shape[1] != self.vocab.field_count:
            raise DataError("id matrix shape does not match the vocabulary")
        if ids.shape[0] == 0:
            raise DataError("empty dataset")
        if labels.shape != (ids.shape[0],):
            raise DataError("label vector length does not match the id matrix")
        if not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        if (ids < off[:-1]).any() or (ids >= off[1:]).any():
            raise DataError("feature id outside its field's block")
        expect = np.bincount(ids.ravel(), minlength=self.vocab.n).astype(np.int64)
        if self.frequencies.shape != (self.vocab.n,) or (self.frequencies != expect).any():
            raise DataError("frequency table inconsistent with instances")

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def instance(self, k: int) -> Instance:
        return Instance(int(self.labels[k]), self.ids[k])

    def __iter__(self):
        for k in range(len(self)):
            yield self.instance(k)

    def fingerprint(self) -> int:
        """CRC32 over the encoded instances; identifies the exact dataset."""
        crc = zlib.crc32(np.ascontiguousarray(self.ids, dtype="<i8").tobytes())
        return zlib.crc32(np.ascontiguousarray(self.labels, dtype="<i8").tobytes(), crc)

    def subsample(self, fraction: float, seed: int) -> "Dataset":
        """Uniform subsample without replacement, original order preserved."""
        if not 0.0 < fraction <= 1.0:
            raise DataError(f"fraction must be in (0, 1], got {fraction}")
        if fraction == 1.0:
            return self
        count = max(1, int(np.rint(fraction * len(self))))
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(self), size=count, replace=False))
        return dataset_from_encoded(self.ids[keep], self.labels[keep], self.vocab)


def dataset_from_encoded(ids: np.ndarray, labels: np.ndarray, vocab: Vocabulary) -> Dataset:
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    freq = np.bincount(ids.ravel(), minlength=vocab.n).astype(np.int64) if ids.size else np.zeros(vocab.n, np.int64)
    return Dataset(ids, labels, freq, vocab)


def encode_rows(raw_rows, vocab: Vocabulary) -> Dataset:
    """Encode raw rows against a fixed vocabulary. Unknown tokens land on the
    field's OOV id; malformed rows raise with their 1-based row number."""
    schema = vocab.schema
    m = schema.field_count
    ids_rows, labels = [], []
    row_number = 0
    for row in raw_rows:
        row_number += 1
        _check_width(row, m, row_number)
        labels.append(_parse_label(row[0], row_number))
        ids_rows.append(
            [vocab.encode_token(j, _cell_token(schema.kinds[j], row[j + 1])) for j in range(m)]
        )
    if row_number == 0:
        raise DataError("empty dataset")
    return dataset_from_encoded(np.array(ids_rows, np.int64), np.array(labels, np.int64), vocab)


def decode_rows(dataset: Dataset) -> list:
    """Rows of tokens that re-encode to exactly this dataset. Bucketed numeric
    ids decode to a representative raw value of their bucket."""
    schema = dataset.vocab.schema
    out = []
    for inst in dataset:
        row = [str(inst.label)]
        for j, fid in enumerate(inst.feature_ids):
            token = dataset.vocab.token_of(int(fid))
            if schema.kinds[j] == NUMERIC_BUCKETED and token not in (OOV_TOKEN, MISSING_TOKEN):
                try:
                    bucket = int(token)
                except ValueError:
                    pass
                else:
                    token = str(2 ** bucket) if bucket > 2 else str(bucket)
            row.append("" if token == MISSING_TOKEN else token)
        out.append(row)
    return out


def read_csv_rows(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh)]


def write_csv_rows(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def load_csv_dataset(path, schema: FieldSchema, min_count: int = 0):
    """Build a vocabulary from a CSV file and encode the same rows with it."""
    rows = read_csv_rows(path)
    vocab = build_vocabulary(rows, schema, min_count)
    return vocab, encode_rows(rows, vocab)
