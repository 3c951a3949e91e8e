"""Base kernels with exact derivative terms, model score points, the
Stein-operator-augmented kernel, and kernelized Stein discrepancy estimators.

The Stein kernel of two scored points ``(z_a, s_a)`` and ``(z_b, s_b)`` is

    trace(grad_a grad_b k)  +  k * (s_a . s_b)
    +  grad_a k . s_b       +  grad_b k . s_a

which is symmetric and positive semi-definite for the kernels below. For a
classifier, ``z = [x || onehot(y)]`` and the score concatenates the gradient
of the class-y log-probability with the full log-probability vector; see
:func:`make_stein_point`. Training points carry their ground-truth label,
test points the model's prediction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import one_hot
from .errors import ModelFormatError, UnsupportedVariantError

__all__ = [
    "BaseKernel",
    "LinearKernel",
    "RBFKernel",
    "IMQKernel",
    "kernel_by_name",
    "SteinPoint",
    "ScoreCache",
    "make_stein_point",
    "make_stein_points",
    "stein_kernel",
    "stein_kernel_profile",
    "stein_gram",
    "KSDEstimate",
    "ksd_vstat",
    "ksd_ustat",
    "median_heuristic_gamma",
    "local_scale_gamma",
    "save_cache",
    "load_cache",
    "reset_kernel_eval_count",
    "kernel_eval_count",
]

# Instrumentation: number of Stein-kernel pair evaluations since the last
# reset. A profile over n cached points counts n.
_EVAL_COUNT = 0


def reset_kernel_eval_count() -> None:
    global _EVAL_COUNT
    _EVAL_COUNT = 0


def kernel_eval_count() -> int:
    return _EVAL_COUNT


def _count_evals(n: int) -> None:
    global _EVAL_COUNT
    _EVAL_COUNT += n


def _check_pair(za, zb):
    za = np.asarray(za, dtype=np.float64)
    zb = np.asarray(zb, dtype=np.float64)
    if za.ndim != 1 or zb.ndim != 1 or za.shape != zb.shape:
        raise ValueError(f"kernel arguments must be equal-length vectors, got {za.shape} and {zb.shape}")
    return za, zb


class BaseKernel:
    """Scalar kernel interface plus vectorized forms against a fixed point.

    ``eval``, ``grad_a``, ``grad_b`` and ``trace_hessian`` operate on a pair
    of equal-length vectors. The ``*_many`` forms take a matrix of rows
    playing the first argument against one fixed second argument; they exist
    so a full explanation query stays a handful of BLAS calls.
    """

    name = "base"

    def eval(self, za, zb) -> float:
        raise NotImplementedError

    def grad_a(self, za, zb) -> np.ndarray:
        raise NotImplementedError

    def grad_b(self, za, zb) -> np.ndarray:
        raise NotImplementedError

    def trace_hessian(self, za, zb) -> float:
        """Sum over coordinates of the mixed second derivative d2k/da_i db_i."""
        raise NotImplementedError

    def eval_many(self, rows, z) -> np.ndarray:
        raise NotImplementedError

    def trace_hessian_many(self, rows, z) -> np.ndarray:
        raise NotImplementedError

    def cross_terms_many(self, rows, row_scores, z, score) -> np.ndarray:
        """Vector of ``grad_a k(row, z) . score + grad_b k(row, z) . row_score``."""
        raise NotImplementedError


class LinearKernel(BaseKernel):
    """k(a, b) = a . b; the trace of the mixed Hessian is the dimension."""

    name = "linear"

    def eval(self, za, zb) -> float:
        za, zb = _check_pair(za, zb)
        return float(za @ zb)

    def grad_a(self, za, zb) -> np.ndarray:
        za, zb = _check_pair(za, zb)
        return zb.copy()

    def grad_b(self, za, zb) -> np.ndarray:
        za, zb = _check_pair(za, zb)
        return za.copy()

    def trace_hessian(self, za, zb) -> float:
        za, zb = _check_pair(za, zb)
        return float(za.shape[0])

    def eval_many(self, rows, z) -> np.ndarray:
        return rows @ z

    def trace_hessian_many(self, rows, z) -> np.ndarray:
        return np.full(rows.shape[0], float(rows.shape[1]))

    def cross_terms_many(self, rows, row_scores, z, score) -> np.ndarray:
        # grad_a k = z (constant over rows), grad_b k = row
        return float(z @ score) + np.einsum("ij,ij->i", rows, row_scores)


class RBFKernel(BaseKernel):
    """k(a, b) = exp(-gamma * ||a - b||^2)."""

    name = "rbf"

    def __init__(self, gamma: float):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.gamma = float(gamma)

    def eval(self, za, zb) -> float:
        za, zb = _check_pair(za, zb)
        diff = za - zb
        return float(np.exp(-self.gamma * (diff @ diff)))

    def grad_a(self, za, zb) -> np.ndarray:
        za, zb = _check_pair(za, zb)
        diff = za - zb
        return -2.0 * self.gamma * diff * np.exp(-self.gamma * (diff @ diff))

    def grad_b(self, za, zb) -> np.ndarray:
        return -self.grad_a(za, zb)

    def trace_hessian(self, za, zb) -> float:
        za, zb = _check_pair(za, zb)
        diff = za - zb
        r2 = float(diff @ diff)
        d = za.shape[0]
        return (2.0 * self.gamma * d - 4.0 * self.gamma**2 * r2) * float(np.exp(-self.gamma * r2))

    def eval_many(self, rows, z) -> np.ndarray:
        diff = rows - z
        return np.exp(-self.gamma * np.einsum("ij,ij->i", diff, diff))

    def trace_hessian_many(self, rows, z) -> np.ndarray:
        diff = rows - z
        r2 = np.einsum("ij,ij->i", diff, diff)
        d = rows.shape[1]
        return (2.0 * self.gamma * d - 4.0 * self.gamma**2 * r2) * np.exp(-self.gamma * r2)

    def cross_terms_many(self, rows, row_scores, z, score) -> np.ndarray:
        diff = rows - z
        k = np.exp(-self.gamma * np.einsum("ij,ij->i", diff, diff))
        # grad_a k = -2 gamma (row - z) k, grad_b k = +2 gamma (row - z) k
        return 2.0 * self.gamma * k * (np.einsum("ij,ij->i", diff, row_scores) - diff @ score)


class IMQKernel(BaseKernel):
    """Inverse multi-quadric kernel k(a, b) = (c^2 + ||a - b||^2)^beta, -1 < beta < 0."""

    name = "imq"

    def __init__(self, c: float = 1.0, beta: float = -0.5):
        if c <= 0:
            raise ValueError("c must be positive")
        if not -1.0 < beta < 0.0:
            raise ValueError("beta must lie in (-1, 0)")
        self.c = float(c)
        self.beta = float(beta)

    def eval(self, za, zb) -> float:
        za, zb = _check_pair(za, zb)
        diff = za - zb
        return float((self.c**2 + diff @ diff) ** self.beta)

    def grad_a(self, za, zb) -> np.ndarray:
        za, zb = _check_pair(za, zb)
        diff = za - zb
        return 2.0 * self.beta * diff * (self.c**2 + diff @ diff) ** (self.beta - 1.0)

    def grad_b(self, za, zb) -> np.ndarray:
        return -self.grad_a(za, zb)

    def trace_hessian(self, za, zb) -> float:
        za, zb = _check_pair(za, zb)
        diff = za - zb
        r2 = float(diff @ diff)
        d = za.shape[0]
        base = self.c**2 + r2
        return (-2.0 * self.beta * d * base ** (self.beta - 1.0)
                - 4.0 * self.beta * (self.beta - 1.0) * r2 * base ** (self.beta - 2.0))

    def eval_many(self, rows, z) -> np.ndarray:
        diff = rows - z
        return (self.c**2 + np.einsum("ij,ij->i", diff, diff)) ** self.beta

    def trace_hessian_many(self, rows, z) -> np.ndarray:
        diff = rows - z
        r2 = np.einsum("ij,ij->i", diff, diff)
        d = rows.shape[1]
        base = self.c**2 + r2
        return (-2.0 * self.beta * d * base ** (self.beta - 1.0)
                - 4.0 * self.beta * (self.beta - 1.0) * r2 * base ** (self.beta - 2.0))

    def cross_terms_many(self, rows, row_scores, z, score) -> np.ndarray:
        diff = rows - z
        r2 = np.einsum("ij,ij->i", diff, diff)
        coeff = 2.0 * self.beta * (self.c**2 + r2) ** (self.beta - 1.0)
        # grad_a k = coeff * (row - z), grad_b k = -coeff * (row - z)
        return coeff * (diff @ score - np.einsum("ij,ij->i", diff, row_scores))


def kernel_by_name(name: str, gamma: float | None = None, c: float = 1.0,
                   beta: float = -0.5) -> BaseKernel:
    """Build a kernel from its registry name: ``linear``, ``rbf``, or ``imq``.

    ``rbf`` requires ``gamma``; callers usually supply the median heuristic.
    """
    name = name.lower()
    if name == "linear":
        return LinearKernel()
    if name == "rbf":
        if gamma is None:
            raise ValueError("rbf kernel needs a gamma (use median_heuristic_gamma)")
        return RBFKernel(gamma)
    if name == "imq":
        return IMQKernel(c=c, beta=beta)
    raise ValueError(f"unknown kernel {name!r}; expected linear, rbf, or imq")


@dataclass(frozen=True)
class SteinPoint:
    """A point ``z`` together with its score vector ``s(z)``, both length D."""

    z: np.ndarray
    score: np.ndarray

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=np.float64)
        score = np.ascontiguousarray(self.score, dtype=np.float64)
        if z.ndim != 1 or score.shape != z.shape:
            raise ValueError("z and score must be equal-length vectors")
        z.setflags(write=False)
        score.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "score", score)

    @property
    def dim(self) -> int:
        return self.z.shape[0]


def make_stein_points(model, x, y, variant: str = "raw"):
    """Batch score construction: returns (Z, S) arrays of shape (n, D).

    raw:        z = [x || onehot(y)],  s = [dlogp_y/dx      || log p(.|x)]
    last-layer: z = [h || onehot(y)],  s = [dlogp_y/dh      || log p(.|x)]
    with h the final hidden representation.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape != (x.shape[0],):
        raise ValueError("labels must match the number of input rows")
    n_classes = model.num_classes
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"class index out of range [0, {n_classes})")
    onehots = np.zeros((x.shape[0], n_classes))
    onehots[np.arange(x.shape[0]), y] = 1.0
    logp = np.atleast_2d(model.predict_log_proba(x))
    if variant == "raw":
        front = x
        grad = np.atleast_2d(model.input_gradient(x, y))
    elif variant == "last-layer":
        front = np.atleast_2d(model.representation(x))
        grad = np.atleast_2d(model.rep_gradient(front, y))
    else:
        raise UnsupportedVariantError(f"unknown variant {variant!r}; expected 'raw' or 'last-layer'")
    z = np.hstack([front, onehots])
    s = np.hstack([grad, logp])
    return z, s


def make_stein_point(model, x, y: int, variant: str = "raw") -> SteinPoint:
    """Scored point for one example; see :func:`make_stein_points`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("x must be a single feature vector")
    one_hot(int(y), model.num_classes)  # range check with the standard error
    z, s = make_stein_points(model, x[None, :], [int(y)], variant)
    return SteinPoint(z[0], s[0])


def stein_kernel(kernel: BaseKernel, pa: SteinPoint, pb: SteinPoint) -> float:
    """Stein kernel value for a pair of scored points (four-term closed form)."""
    if pa.dim != pb.dim:
        raise ValueError(f"dimension mismatch: {pa.dim} vs {pb.dim}")
    _count_evals(1)
    value = kernel.trace_hessian(pa.z, pb.z)
    value += kernel.eval(pa.z, pb.z) * float(pa.score @ pb.score)
    value += float(kernel.grad_a(pa.z, pb.z) @ pb.score)
    value += float(kernel.grad_b(pa.z, pb.z) @ pa.score)
    return float(value)


def stein_kernel_profile(kernel: BaseKernel, rows, row_scores, z, score) -> np.ndarray:
    """Stein kernel of every cached row against one scored point.

    ``rows``/``row_scores`` are (n, D); ``z``/``score`` are (D,). Returns a
    length-n vector, counting n pair evaluations.
    """
    rows = np.asarray(rows, dtype=np.float64)
    row_scores = np.asarray(row_scores, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    if rows.ndim != 2 or rows.shape != row_scores.shape:
        raise ValueError("rows and row_scores must be matching (n, D) matrices")
    if z.shape != (rows.shape[1],) or score.shape != z.shape:
        raise ValueError("z and score must be length-D vectors")
    _count_evals(rows.shape[0])
    values = kernel.trace_hessian_many(rows, z)
    values = values + kernel.eval_many(rows, z) * (row_scores @ score)
    values = values + kernel.cross_terms_many(rows, row_scores, z, score)
    return values


def stein_gram(kernel: BaseKernel, rows, row_scores) -> np.ndarray:
    """Full (n, n) Stein-kernel Gram matrix of a set of scored points."""
    rows = np.asarray(rows, dtype=np.float64)
    row_scores = np.asarray(row_scores, dtype=np.float64)
    n = rows.shape[0]
    gram = np.empty((n, n))
    for i in range(n):
        gram[i] = stein_kernel_profile(kernel, rows, row_scores, rows[i], row_scores[i])
    return gram


class KSDEstimate(NamedTuple):
    """A discrepancy estimate with the standard error of its pair terms.

    ``std_error`` is the sample standard deviation of the off-diagonal pair
    values divided by the square root of the number of unordered pairs.
    """

    value: float
    std_error: float


def _stack_points(points):
    points = list(points)
    if not points:
        raise ValueError("need at least one scored point")
    dim = points[0].dim
    if any(p.dim != dim for p in points):
        raise ValueError("all points must share one dimension")
    z = np.stack([p.z for p in points])
    s = np.stack([p.score for p in points])
    return z, s


def _offdiag_std_error(gram: np.ndarray) -> float:
    n = gram.shape[0]
    if n < 3:
        return 0.0
    iu = np.triu_indices(n, k=1)
    values = gram[iu]
    return float(values.std(ddof=1) / np.sqrt(values.size))


def ksd_vstat(points, kernel: BaseKernel) -> KSDEstimate:
    """V-statistic estimate: the mean of the full Stein Gram matrix."""
    z, s = _stack_points(points)
    gram = stein_gram(kernel, z, s)
    return KSDEstimate(float(gram.mean()), _offdiag_std_error(gram))


def ksd_ustat(points, kernel: BaseKernel) -> KSDEstimate:
    """U-statistic estimate: the mean over off-diagonal pairs (needs n >= 2)."""
    z, s = _stack_points(points)
    n = z.shape[0]
    if n < 2:
        raise ValueError("U-statistic needs at least 2 points")
    gram = stein_gram(kernel, z, s)
    total = gram.sum() - np.trace(gram)
    return KSDEstimate(float(total / (n * (n - 1))), _offdiag_std_error(gram))


def median_heuristic_gamma(z_vectors, max_points: int = 1000, seed: int = 0) -> float:
    """RBF bandwidth rule gamma = 1 / (2 m^2) with m the median pairwise distance.

    At most ``max_points`` rows are kept (uniform seeded subsample). Falls
    back to gamma = 1 when all points coincide.
    """
    z = np.asarray(z_vectors, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 points")
    if z.shape[0] > max_points:
        idx = np.random.default_rng(seed).choice(z.shape[0], size=max_points, replace=False)
        z = z[idx]
    sq_norms = np.einsum("ij,ij->i", z, z)
    sq_dists = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (z @ z.T)
    np.clip(sq_dists, 0.0, None, out=sq_dists)
    iu = np.triu_indices(z.shape[0], k=1)
    m = float(np.median(np.sqrt(sq_dists[iu])))
    if m == 0.0:
        return 1.0
    return 1.0 / (2.0 * m * m)


def local_scale_gamma(z_vectors, max_points: int = 1000, seed: int = 0) -> float:
    """RBF bandwidth from the nearest-neighbor scale: gamma = 1 / (2 m^2) with
    m the median nearest-neighbor distance.

    The global median heuristic tracks the diameter of the point cloud; in
    low-dimensional data that is orders of magnitude coarser than the spacing
    between individual points, and a kernel that wide cannot distinguish a
    point from its neighbors. Use this rule when retrieval should resolve
    individual training points. Falls back to gamma = 1 when points coincide.
    """
    z = np.asarray(z_vectors, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] < 2:
        raise ValueError("local scale needs at least 2 points")
    if z.shape[0] > max_points:
        idx = np.random.default_rng(seed).choice(z.shape[0], size=max_points, replace=False)
        z = z[idx]
    sq_norms = np.einsum("ij,ij->i", z, z)
    sq_dists = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (z @ z.T)
    np.clip(sq_dists, 0.0, None, out=sq_dists)
    np.fill_diagonal(sq_dists, np.inf)
    m = float(np.median(np.sqrt(sq_dists.min(axis=1))))
    if m == 0.0:
        return 1.0
    return 1.0 / (2.0 * m * m)


CACHE_MAGIC = b"HDXC"
CACHE_VERSION = 1
_VARIANT_CODES = {"raw": 0, "last-layer": 1}
_VARIANT_NAMES = {v: k for k, v in _VARIANT_CODES.items()}


@dataclass
class ScoreCache:
    """Precomputed scored points for a training set, keyed to one model.

    ``z`` and ``scores`` are (n, D); ``labels`` holds the ground-truth class
    of each record. The fingerprint ties the cache to the exact model whose
    scores it holds; consumers must reject mismatches.
    """

    model_fingerprint: int
    variant: str
    z: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.variant not in _VARIANT_CODES:
            raise ValueError(f"unknown cache variant {self.variant!r}")
        self.z = np.ascontiguousarray(self.z, dtype=np.float64)
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.z.ndim != 2 or self.z.shape != self.scores.shape:
            raise ValueError("z and scores must be matching (n, D) matrices")
        if self.z.shape[0] < 1:
            raise ValueError("cache needs at least one record")
        if self.labels.shape != (self.z.shape[0],):
            raise ValueError("labels must have one entry per record")
        self.z.setflags(write=False)
        self.scores.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    def point(self, i: int) -> SteinPoint:
        return SteinPoint(self.z[i], self.scores[i])

    def serialize(self) -> bytes:
        n, dim = self.z.shape
        header = CACHE_MAGIC + struct.pack(
            "<IBQQQ", CACHE_VERSION, _VARIANT_CODES[self.variant],
            self.model_fingerprint, n, dim,
        )
        record = np.dtype([("z", "<f8", (dim,)), ("score", "<f8", (dim,)), ("label", "<u4")])
        body = np.empty(n, dtype=record)
        body["z"] = self.z
        body["score"] = self.scores
        body["label"] = self.labels.astype(np.uint32)
        return header + body.tobytes()

    @classmethod
    def deserialize(cls, data: bytes) -> "ScoreCache":
        header_size = 4 + struct.calcsize("<IBQQQ")
        if len(data) < header_size:
            raise ModelFormatError("cache binary truncated before header")
        if data[:4] != CACHE_MAGIC:
            raise ModelFormatError(f"bad cache magic {data[:4]!r}, expected {CACHE_MAGIC!r}")
        version, variant_code, fingerprint, n, dim = struct.unpack("<IBQQQ", data[4:header_size])
        if version != CACHE_VERSION:
            raise ModelFormatError(f"unsupported cache version {version}")
        if variant_code not in _VARIANT_NAMES:
            raise ModelFormatError(f"unknown cache variant code {variant_code}")
        record = np.dtype([("z", "<f8", (dim,)), ("score", "<f8", (dim,)), ("label", "<u4")])
        expected = header_size + n * record.itemsize
        if len(data) != expected:
            raise ModelFormatError(f"cache binary has {len(data)} bytes, expected {expected}")
        body = np.frombuffer(data, dtype=record, count=n, offset=header_size)
        return cls(
            model_fingerprint=fingerprint,
            variant=_VARIANT_NAMES[variant_code],
            z=body["z"].copy(),
            scores=body["score"].copy(),
            labels=body["label"].astype(np.int64),
        )


def save_cache(cache: ScoreCache, path) -> None:
    with open(path, "wb") as fh:
        fh.write(cache.serialize())


def load_cache(path) -> ScoreCache:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ModelFormatError(f"cannot read cache file {path}: {exc}") from exc
    return ScoreCache.deserialize(data)
