"""Dense matrices, SVD, vectorization, rank truncation, and sparse observation sets.

Shared containers for the completion solvers, the statistics pipeline, and the
field generators. All values are immutable after construction and safe to share
across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DimensionError,
    DuplicateIndexError,
    InputError,
    NumericalFailure,
)

__all__ = [
    "DenseMatrix",
    "SpectralDecomposition",
    "ObservationSet",
    "svd",
    "vec",
    "unvec",
    "truncate_rank",
    "mask_project",
    "save_matrix",
    "load_matrix",
    "save_observations",
    "load_observations",
]

# Shortest exact round-trip for doubles in CSV output.
_FLOAT_FMT = "%.17g"


def _as_readonly(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a and a.flags.writeable:
        out = a.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class DenseMatrix:
    """A rows x cols real matrix with finite entries."""

    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionError("matrix dimensions must be positive")
        a = np.asarray(self.data, dtype=np.float64)
        if a.shape != (self.rows, self.cols):
            raise DimensionError(
                f"entries shape {a.shape} does not match ({self.rows}, {self.cols})"
            )
        if not np.all(np.isfinite(a)):
            raise InputError("matrix entries must be finite")
        object.__setattr__(self, "data", _as_readonly(a))

    @classmethod
    def from_array(cls, a) -> "DenseMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionError("expected a 2-D array")
        return cls(a.shape[0], a.shape[1], a)

    def to_array(self) -> np.ndarray:
        """Writable copy of the entries."""
        return self.data.copy()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def at(self, i: int, j: int) -> float:
        return float(self.data[i, j])

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Full SVD with nonincreasing singular values and orthonormal factors."""

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.singular_values, dtype=np.float64)
        u = np.asarray(self.left_vectors, dtype=np.float64)
        v = np.asarray(self.right_vectors, dtype=np.float64)
        if s.ndim != 1 or u.ndim != 2 or v.ndim != 2:
            raise DimensionError("malformed decomposition factors")
        if u.shape[1] != s.size or v.shape[1] != s.size:
            raise DimensionError("factor column counts must match value count")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise InputError("singular values must be nonincreasing and nonnegative")
        object.__setattr__(self, "singular_values", _as_readonly(s))
        object.__setattr__(self, "left_vectors", _as_readonly(u))
        object.__setattr__(self, "right_vectors", _as_readonly(v))

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


@dataclass(frozen=True)
class ObservationSet:
    """Sparse (i, j, value) samples of a rows x cols grid, no duplicate cells.

    Stores explicit triplets; zero-filling is an operation of the baseline
    detector, not part of the data.
    """

    rows: int
    cols: int
    ii: np.ndarray
    jj: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionError("grid dimensions must be positive")
        ii = np.asarray(self.ii, dtype=np.int64)
        jj = np.asarray(self.jj, dtype=np.int64)
        vv = np.asarray(self.values, dtype=np.float64)
        if not (ii.ndim == jj.ndim == vv.ndim == 1) or not (ii.size == jj.size == vv.size):
            raise DimensionError("index and value arrays must be equal-length vectors")
        if ii.size:
            if ii.min() < 0 or ii.max() >= self.rows or jj.min() < 0 or jj.max() >= self.cols:
                raise DimensionError("sample index outside the grid")
        lin = ii * self.cols + jj
        if np.unique(lin).size != lin.size:
            raise DuplicateIndexError("duplicate (i, j) sample")
        if not np.all(np.isfinite(vv)):
            raise InputError("sample values must be finite")
        object.__setattr__(self, "ii", _as_readonly(ii, dtype=np.int64))
        object.__setattr__(self, "jj", _as_readonly(jj, dtype=np.int64))
        object.__setattr__(self, "values", _as_readonly(vv))

    @classmethod
    def from_samples(cls, rows: int, cols: int, samples) -> "ObservationSet":
        samples = list(samples)
        ii = [s[0] for s in samples]
        jj = [s[1] for s in samples]
        vv = [s[2] for s in samples]
        return cls(rows, cols, np.array(ii, dtype=np.int64),
                   np.array(jj, dtype=np.int64), np.array(vv, dtype=np.float64))

    @property
    def samples(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(v))
                for i, j, v in zip(self.ii, self.jj, self.values)]

    def __len__(self) -> int:
        return int(self.ii.size)

    def linear_indices(self) -> np.ndarray:
        return self.ii * self.cols + self.jj

    def dense_mask(self) -> np.ndarray:
        mask = np.zeros((self.rows, self.cols), dtype=bool)
        mask[self.ii, self.jj] = True
        return mask

    def zero_filled(self) -> DenseMatrix:
        """Dense matrix with unobserved cells set to zero."""
        a = np.zeros((self.rows, self.cols))
        a[self.ii, self.jj] = self.values
        return DenseMatrix(self.rows, self.cols, a)


def svd(m: DenseMatrix) -> SpectralDecomposition:
    """Full SVD of m with a fixed sign convention.

    The largest-magnitude entry of each left vector is forced positive so that
    decompositions are stable test fixtures.
    """
    try:
        u, s, vt = np.linalg.svd(m.data, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericalFailure(f"SVD did not converge: {e}") from e
    v = vt.T
    # sign fix per column; ties resolved by the first maximal entry
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    v = v * signs
    return SpectralDecomposition(s, u, v)


def vec(m: DenseMatrix) -> np.ndarray:
    """Stack columns of m into one vector."""
    return m.data.ravel(order="F").copy()


def unvec(v, rows: int, cols: int) -> DenseMatrix:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != rows * cols:
        raise DimensionError(f"vector length {v.size} != {rows}*{cols}")
    return DenseMatrix(rows, cols, v.reshape((rows, cols), order="F"))


def truncate_rank(d: SpectralDecomposition, r: int) -> DenseMatrix:
    """Best rank-r approximation from a decomposition (Eckart-Young)."""
    k = d.singular_values.size
    if not 1 <= r <= k:
        raise DimensionError(f"rank {r} outside [1, {k}]")
    a = (d.left_vectors[:, :r] * d.singular_values[:r]) @ d.right_vectors[:, :r].T
    return DenseMatrix.from_array(a)


def mask_project(m: DenseMatrix, omega) -> ObservationSet:
    """Sample m at the index set omega (iterable of (i, j) pairs)."""
    pairs = list(omega)
    if pairs:
        idx = np.asarray(pairs, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != 2:
            raise DimensionError("omega must contain (i, j) pairs")
        ii, jj = idx[:, 0], idx[:, 1]
        if ii.min() < 0 or ii.max() >= m.rows or jj.min() < 0 or jj.max() >= m.cols:
            raise DimensionError("omega index outside the grid")
        lin = ii * m.cols + jj
        if np.unique(lin).size != lin.size:
            raise DuplicateIndexError("duplicate index in omega")
        vv = m.data[ii, jj]
    else:
        ii = jj = np.array([], dtype=np.int64)
        vv = np.array([], dtype=np.float64)
    return ObservationSet(m.rows, m.cols, ii, jj, vv)


def save_matrix(m: DenseMatrix, path) -> None:
    np.savetxt(path, m.data, fmt=_FLOAT_FMT, delimiter=",")


def load_matrix(path) -> DenseMatrix:
    a = np.loadtxt(path, delimiter=",", ndmin=2)
    return DenseMatrix.from_array(a)


def save_observations(obs: ObservationSet, path) -> None:
    """CSV with a `# rows=<R> cols=<C>` sidecar line and an `i,j,value` header."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# rows={obs.rows} cols={obs.cols}\n")
        fh.write("i,j,value\n")
        for i, j, v in zip(obs.ii, obs.jj, obs.values):
            fh.write("%d,%d,%s\n" % (i, j, _FLOAT_FMT % v))


def load_observations(path) -> ObservationSet:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise InputError(f"missing dimension header in {path}")
        try:
            parts = dict(p.split("=") for p in header.lstrip("#").split())
            rows, cols = int(parts["rows"]), int(parts["cols"])
        except (ValueError, KeyError) as e:
            raise InputError(f"malformed dimension header in {path}") from e
        if fh.readline().strip() != "i,j,value":
            raise InputError(f"missing i,j,value header in {path}")
        ii, jj, vv = [], [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            a, b, c = line.split(",")
            ii.append(int(a))
            jj.append(int(b))
            vv.append(float(c))
    return ObservationSet(rows, cols, np.array(ii, dtype=np.int64),
                          np.array(jj, dtype=np.int64), np.array(vv, dtype=np.float64))
