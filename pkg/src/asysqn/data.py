"""Datasets: in-memory representation, LibSVM text I/O and synthetic generators.

Rows are stored either as a dense ``(n, d)`` float64 array (synthetic data) or
as a ``scipy.sparse.csr_matrix`` (parsed LibSVM files).  All randomness uses
numpy's counter-based Philox bit generator so a given seed yields the same
dataset on every platform.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from typing import Iterable, TextIO, Union

import numpy as np
import scipy.sparse as sp

Rows = Union[np.ndarray, sp.csr_matrix]


class ParseError(ValueError):
    """Malformed LibSVM input; carries the 1-based line number."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class Dataset:
    rows: Rows
    labels: np.ndarray

    def __post_init__(self):
        rows = self.rows
        if sp.issparse(rows):
            rows = sp.csr_matrix(rows, dtype=np.float64)
            rows.sort_indices()
        else:
            rows = np.ascontiguousarray(rows, dtype=np.float64)
            if rows.ndim != 2:
                raise ValueError("dense rows must be a 2-D array")
        labels = np.ascontiguousarray(self.labels, dtype=np.float64).ravel()
        if rows.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if labels.shape[0] != rows.shape[0]:
            raise ValueError(f"{rows.shape[0]} rows but {labels.shape[0]} labels")
        if not np.all(np.isfinite(labels)):
            raise ValueError("labels must be finite")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.rows)

    def dense_rows(self) -> np.ndarray:
        return self.rows.toarray() if self.is_sparse else self.rows

    def row_sq_norms(self) -> np.ndarray:
        if self.is_sparse:
            return np.asarray(self.rows.multiply(self.rows).sum(axis=1)).ravel()
        return np.einsum("ij,ij->i", self.rows, self.rows)

    def content_hash(self) -> str:
        """SHA-256 over shape, nonzero structure and labels."""
        h = hashlib.sha256()
        h.update(f"{self.n}x{self.d}".encode())
        if self.is_sparse:
            for arr in (self.rows.indptr, self.rows.indices, self.rows.data):
                h.update(np.ascontiguousarray(arr).tobytes())
        else:
            h.update(self.rows.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()


def _map_label(value: float, mode: str | None) -> float:
    if mode is None:
        return value
    if mode == "zero-neg":
        return -1.0 if value == 0 else value
    if mode == "parity":
        return 1.0 if int(value) % 2 == 0 else -1.0
    raise ValueError(f"unknown label mode {mode!r}")


def parse_libsvm(
    stream: TextIO | Iterable[str],
    d: int | None = None,
    labels: str | None = None,
) -> Dataset:
    """Read ``label idx:val idx:val ...`` lines into a sparse Dataset.

    Indices are 1-based and must be strictly ascending within a line.  ``d``
    overrides the inferred dimension (the largest index seen).  ``labels``
    selects a binarisation: ``"zero-neg"`` maps 0 to -1 and ``"parity"``
    maps even class ids to +1 and odd ones to -1 (used for MNIST).
    """
    ys: list[float] = []
    indptr = [0]
    cols: list[int] = []
    vals: list[float] = []
    max_idx = 0
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            y = float(tokens[0])
        except ValueError:
            raise ParseError(lineno, f"bad label {tokens[0]!r}") from None
        if not math.isfinite(y):
            raise ParseError(lineno, "label is not finite")
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(lineno, f"expected idx:val, got {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(lineno, f"non-numeric token {tok!r}") from None
            if idx <= prev:
                raise ParseError(lineno, f"index {idx} not ascending (after {prev})")
            prev = idx
            cols.append(idx - 1)
            vals.append(val)
        max_idx = max(max_idx, prev)
        ys.append(_map_label(y, labels))
        indptr.append(len(cols))
    if not ys:
        raise ParseError(0, "no data rows")
    if d is None:
        d = max_idx
    elif d < max_idx:
        raise ValueError(f"dimension override {d} smaller than max index {max_idx}")
    rows = sp.csr_matrix(
        (np.array(vals, dtype=np.float64), np.array(cols, dtype=np.int64), np.array(indptr)),
        shape=(len(ys), max(d, 1)),
    )
    return Dataset(rows, np.array(ys))


def read_libsvm(path, d: int | None = None, labels: str | None = None) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh, d=d, labels=labels)


def write_libsvm(data: Dataset, stream: TextIO) -> None:
    """Write nonzeros with round-trip float formatting."""
    rows = data.rows if data.is_sparse else sp.csr_matrix(data.rows)
    for i in range(data.n):
        lo, hi = rows.indptr[i], rows.indptr[i + 1]
        parts = [repr(float(data.labels[i]))]
        for j, v in zip(rows.indices[lo:hi], rows.data[lo:hi]):
            if v != 0.0:
                parts.append(f"{j + 1}:{float(v)!r}")
        stream.write(" ".join(parts) + "\n")


def to_libsvm_text(data: Dataset) -> str:
    buf = io.StringIO()
    write_libsvm(data, buf)
    return buf.getvalue()


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def gen_sim1(n: int, a: float, b: float, seed: int = 0) -> Dataset:
    """Two uniform features on [0, 1]; ``y = a*z1 + b*z2 + N(0, 1)`` noise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    z = rng.random((n, 2))
    eps = rng.standard_normal(n)
    return Dataset(z, a * z[:, 0] + b * z[:, 1] + eps)


def gen_sim2(n: int, d: int, cond: float = 1e3, seed: int = 0) -> Dataset:
    """Uniform features with column ``j`` scaled by ``cond**(-j/(d-1))``.

    Labels are ``z @ ones(d) + N(0, 1)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if d < 2:
        raise ValueError("d must be >= 2")
    if cond < 1:
        raise ValueError("cond must be >= 1")
    rng = _rng(seed)
    scale = cond ** (-np.arange(d) / (d - 1))
    z = rng.random((n, d)) * scale
    eps = rng.standard_normal(n)
    return Dataset(z, z.sum(axis=1) + eps)


def row_normalize(data: Dataset) -> Dataset:
    norms = np.sqrt(data.row_sq_norms())
    inv = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    if data.is_sparse:
        rows = sp.diags(inv) @ data.rows
    else:
        rows = data.rows * inv[:, None]
    return Dataset(rows, data.labels.copy())
