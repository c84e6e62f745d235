"""Sparse datasets: LIBSVM ingestion, normalization, synthetic generators.

Examples are stored column-wise (one sparse vector per example) because the
solver touches the data one example at a time. A CSR view is built lazily
for bulk operations (objective values, full gradients).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class ParseError(ValueError):
    """Malformed LIBSVM input; message names the offending line."""


def _norm_sq(values: np.ndarray) -> float:
    # Left-to-right accumulation, kept distinct from numpy's pairwise sum
    # so the stored norms are reproducible sums of squares.
    acc = 0.0
    for v in values:
        acc += float(v) * float(v)
    return acc


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(eq=False)
class SparseExample:
    """One sparse feature vector: 0-based strictly increasing indices."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        self.indices = _freeze(np.asarray(self.indices, dtype=np.int64))
        self.values = _freeze(np.asarray(self.values, dtype=np.float64))
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ValueError("indices and values must be 1-d and equally long")
        if self.indices.size:
            if np.any(np.diff(self.indices) <= 0):
                raise ValueError("indices must be strictly increasing")
            if self.indices[0] < 0 or self.indices[-1] >= self.dim:
                raise ValueError("index out of range for dim=%d" % self.dim)
        if np.any(self.values == 0.0):
            raise ValueError("explicit zero values are not canonical")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def norm_sq(self) -> float:
        return _norm_sq(self.values)

    def dot(self, w: np.ndarray) -> float:
        """Inner product with a dense vector, touching only the support."""
        if self.indices.size == 0:
            return 0.0
        return float(np.dot(self.values, w[self.indices]))


@dataclass(eq=False)
class Dataset:
    """n sparse examples of dimension d plus per-example labels.

    Immutable after construction; norms and nnz counts are cached.
    """

    examples: list[SparseExample]
    labels: np.ndarray
    norms: np.ndarray = field(init=False)
    nnz: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.examples:
            raise ValueError("dataset must contain at least one example")
        self.labels = _freeze(np.asarray(self.labels, dtype=np.float64))
        if self.labels.shape != (len(self.examples),):
            raise ValueError("labels length must equal number of examples")
        d = self.examples[0].dim
        if any(ex.dim != d for ex in self.examples):
            raise ValueError("all examples must share the same dimension")
        self.norms = _freeze(
            np.array([np.sqrt(ex.norm_sq()) for ex in self.examples])
        )
        self.nnz = _freeze(np.array([ex.nnz for ex in self.examples], dtype=np.int64))
        self._csr = None
        self._csr_t = None

    @property
    def n(self) -> int:
        return len(self.examples)

    @property
    def d(self) -> int:
        return self.examples[0].dim

    def margin(self, i: int, w: np.ndarray) -> float:
        return self.examples[i].dot(w)

    def margins(self, w: np.ndarray) -> np.ndarray:
        """All inner products A_i^T w at once (CSR matvec)."""
        return self.csr() @ w

    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            indptr[1:] = np.cumsum(self.nnz)
            idx = np.concatenate([ex.indices for ex in self.examples]) \
                if self.n else np.empty(0, dtype=np.int64)
            val = np.concatenate([ex.values for ex in self.examples]) \
                if self.n else np.empty(0)
            self._csr = sp.csr_matrix((val, idx, indptr), shape=(self.n, self.d))
        return self._csr

    def csr_t(self) -> sp.csr_matrix:
        if self._csr_t is None:
            self._csr_t = self.csr().T.tocsr()
        return self._csr_t

    def combine(self, alpha: np.ndarray) -> np.ndarray:
        """Dense vector sum_i alpha_i A_i."""
        return self.csr_t() @ alpha


def parse_libsvm(source, n_features: int | None = None) -> Dataset:
    """Parse LIBSVM/SVMlight text: ``label idx:val idx:val ...`` per line.

    File indices are 1-based and must be strictly increasing within a line;
    they are remapped to 0-based. ``#`` starts a comment. Explicit zero
    values are dropped (canonical form). The dimension is the largest index
    seen unless ``n_features`` overrides it.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    elif hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        lines = list(source)

    labels: list[float] = []
    rows: list[tuple[np.ndarray, np.ndarray]] = []
    max_index = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            label = float(parts[0])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric label {parts[0]!r}")
        idx: list[int] = []
        val: list[float] = []
        prev = 0
        for tok in parts[1:]:
            head, sep, tail = tok.partition(":")
            if not sep:
                raise ParseError(f"line {lineno}: expected idx:val, got {tok!r}")
            try:
                j = int(head)
                x = float(tail)
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric token {tok!r}")
            if j < 1:
                raise ParseError(f"line {lineno}: index {j} is not 1-based")
            if j <= prev:
                raise ParseError(f"line {lineno}: non-increasing indices")
            prev = j
            if x != 0.0:
                idx.append(j - 1)
                val.append(x)
        if prev > max_index:
            max_index = prev
        labels.append(label)
        rows.append((np.array(idx, dtype=np.int64), np.array(val)))

    if not rows:
        raise ParseError("empty input: no data lines")
    d = max_index if n_features is None else int(n_features)
    if d < max_index:
        raise ParseError(
            f"n_features={n_features} smaller than max index {max_index}"
        )
    d = max(d, 1)
    examples = [SparseExample(i, v, d) for i, v in rows]
    return Dataset(examples, np.array(labels))


def serialize_libsvm(dataset: Dataset) -> str:
    """Canonical text form (1-based indices, shortest round-trip floats)."""
    out = []
    for ex, y in zip(dataset.examples, dataset.labels):
        toks = [repr(float(y))]
        toks += [
            "%d:%s" % (j + 1, repr(float(v)))
            for j, v in zip(ex.indices, ex.values)
        ]
        out.append(" ".join(toks))
    return "\n".join(out) + "\n"


def example_norms(dataset: Dataset) -> np.ndarray:
    return dataset.norms


def example_nnz(dataset: Dataset) -> np.ndarray:
    return dataset.nnz


def normalize_max_norm(dataset: Dataset) -> tuple[Dataset, float]:
    """Scale every example by 1/max_i ||A_i|| (one global scale).

    Returns the rescaled dataset and the original max norm. Preserves the
    relative geometry of the examples; per-example unit scaling is the
    alternative reading, see :func:`normalize_per_example`.
    """
    scale = float(np.max(dataset.norms))
    if scale == 0.0:
        raise ValueError("cannot normalize: all examples have zero norm")
    examples = [
        SparseExample(ex.indices, ex.values / scale, ex.dim)
        for ex in dataset.examples
    ]
    return Dataset(examples, dataset.labels), scale


def normalize_per_example(dataset: Dataset) -> tuple[Dataset, np.ndarray]:
    """Scale each nonzero example to unit norm; zero examples untouched."""
    scales = dataset.norms.copy()
    if np.all(scales == 0.0):
        raise ValueError("cannot normalize: all examples have zero norm")
    examples = []
    for ex, s in zip(dataset.examples, scales):
        examples.append(
            SparseExample(ex.indices, ex.values / s if s > 0 else ex.values, ex.dim)
        )
    return Dataset(examples, dataset.labels), scales


LABEL_MODELS = ("linear-sign", "linear-noise", "skewed-nnz")


def gen_synthetic(
    n: int,
    d: int,
    density: float,
    label_model: str,
    seed: int,
    tail_exponent: float = 2.0,
) -> Dataset:
    """Random sparse dataset, deterministic for a fixed seed.

    ``linear-sign`` plants a weight vector and labels by its sign
    (classification, y in {-1,+1}); ``linear-noise`` adds Gaussian noise to
    the planted margins (regression); ``skewed-nnz`` draws per-example nnz
    from a Pareto tail (median ~ density*d, exponent ``tail_exponent``) for
    load-balancing experiments, labeled by sign.
    """
    if not (0.0 < density <= 1.0):
        raise ValueError(f"density must be in (0, 1], got {density}")
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)

    if label_model == "skewed-nnz":
        # Classical Pareto with unit median: x_m * 2^(1/a) = 1.
        x_m = 2.0 ** (-1.0 / tail_exponent)
        draws = x_m * (1.0 + rng.pareto(tail_exponent, size=n))
        counts = np.clip(np.rint(density * d * draws).astype(int), 1, d)
    elif label_model in ("linear-sign", "linear-noise"):
        counts = np.clip(rng.binomial(d, density, size=n), 1, d)
    else:
        raise ValueError(f"unknown label_model {label_model!r}")

    examples = []
    for k in counts:
        idx = np.sort(rng.choice(d, size=int(k), replace=False))
        val = rng.standard_normal(int(k))
        val[val == 0.0] = 1.0
        examples.append(SparseExample(idx, val, d))

    w_true = rng.standard_normal(d)
    margins = np.array([ex.dot(w_true) for ex in examples])
    if label_model == "linear-noise":
        labels = margins + 0.1 * rng.standard_normal(n)
    else:
        labels = np.where(margins >= 0.0, 1.0, -1.0)
    return Dataset(examples, labels)
