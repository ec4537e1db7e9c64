"""Joint two-channel NMF with an orthogonality penalty on the source bases.

Model::

    X ~ X_hat = B_S @ G_S + B_V @ G_V      (internal channel)
    Y ~ Y_hat = B_V @ H_V                  (external channel)

with cost ``KL(X | X_hat) + KL(Y | Y_hat) + beta * offdiag_sum(B_S.T @ B_S)``.
Bases are initialized from the truncated SVD of ``X``; gains are random.
A single-channel orthogonal NMF update is kept as a baseline.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
import csv
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.special import xlogy
from threadpoolctl import threadpool_limits

from ._validation import EPS, check_matrix, check_same_shape, check_positive_int
from .exceptions import ConfigurationError, InvalidInputError, NumericalError

logger = logging.getLogger(__name__)

# An iteration whose total cost rises by more than this (relative) is flagged.
COST_INCREASE_TOL = 1e-6
# Early stopping needs this many consecutive small relative changes.
PATIENCE = 5


@dataclass(frozen=True)
class FactorizationConfig:
    """Hyper-parameters of :func:`factorize`.

    ``n_source_bases`` must be even: half of the source bases end up in the
    wheeze group during detection.
    """

    n_source_bases: int = 8
    n_noise_bases: int = 48
    max_iter: int = 100
    beta_ortho: float = 1.0
    tol: float = 1e-4
    early_stopping: bool = False
    seed: int = 0
    n_threads: int = 1
    init: str = "svd"

    def __post_init__(self):
        try:
            check_positive_int(self.n_source_bases, "n_source_bases", minimum=2)
            check_positive_int(self.n_noise_bases, "n_noise_bases")
            check_positive_int(self.max_iter, "max_iter")
            check_positive_int(self.n_threads, "n_threads")
        except InvalidInputError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.n_source_bases % 2:
            raise ConfigurationError(f"n_source_bases must be even, got {self.n_source_bases}")
        if not self.beta_ortho >= 0:
            raise ConfigurationError(f"beta_ortho must be non-negative, got {self.beta_ortho}")
        if not self.tol >= 0:
            raise ConfigurationError(f"tol must be non-negative, got {self.tol}")
        if self.init not in ("svd", "random"):
            raise ConfigurationError(f"init must be 'svd' or 'random', got {self.init!r}")

    @property
    def n_components(self):
        return self.n_source_bases + self.n_noise_bases


@dataclass(frozen=True)
class SvdFactors:
    """Leading singular triplets: ``X ~ U @ diag(s) @ V.T``."""

    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    @property
    def rank_budget(self):
        return self.singular_values.shape[0]

    def reconstruct(self, k=None):
        k = self.rank_budget if k is None else k
        return (self.left_vectors[:, :k] * self.singular_values[:k]) @ self.right_vectors[:, :k].T


@dataclass
class NmfModel:
    B_S: np.ndarray
    B_V: np.ndarray
    G_S: np.ndarray
    G_V: np.ndarray
    H_V: np.ndarray
    beta_ortho: float = 0.0
    n_iter: int = 0

    def __post_init__(self):
        F, K_S = self.B_S.shape
        K_V = self.B_V.shape[1]
        T = self.G_S.shape[1]
        expected = {
            "B_V": (F, K_V),
            "G_S": (K_S, T),
            "G_V": (K_V, T),
            "H_V": (K_V, T),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidInputError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )

    @property
    def shape(self):
        """``(F, T, K_S, K_V)``."""
        return self.B_S.shape[0], self.G_S.shape[1], self.B_S.shape[1], self.B_V.shape[1]

    def source_model(self):
        return self.B_S @ self.G_S

    def noise_model(self):
        return self.B_V @ self.G_V

    def internal_model(self):
        return self.B_S @ self.G_S + self.B_V @ self.G_V

    def external_model(self):
        return self.B_V @ self.H_V

    def factors(self):
        return self.B_S, self.B_V, self.G_S, self.G_V, self.H_V

    def copy(self):
        return replace(self, **{k: v.copy() for k, v in zip(("B_S", "B_V", "G_S", "G_V", "H_V"), self.factors())})


class CostEntry(NamedTuple):
    kl_internal: float
    kl_external: float
    penalty: float
    total: float


@dataclass
class CostTrace:
    """Cost components per iteration; entry 0 is the initial model."""

    entries: list = field(default_factory=list)
    increases: list = field(default_factory=list)

    CSV_HEADER = ("iteration", "kl_internal", "kl_external", "penalty", "total")

    def append(self, entry):
        self.entries.append(CostEntry(*entry))

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def total(self):
        return np.array([e.total for e in self.entries])

    def rows(self):
        for i, e in enumerate(self.entries):
            yield (i, *e)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for row in self.rows():
                writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def truncated_svd(X, k):
    """The ``k`` leading singular triplets of ``X`` (LAPACK ``gesdd``).

    Signs are fixed so each left vector has a non-negative sum, which makes the
    output deterministic.
    """
    X = check_matrix(X, "X", nonnegative=False)
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= min(X.shape):
        raise InvalidInputError(f"k must be in [1, {min(X.shape)}], got {k!r}")
    k = int(k)
    try:
        U, s, Vt = scipy.linalg.svd(X, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        U, s, Vt = scipy.linalg.svd(X, full_matrices=False, lapack_driver="gesvd", check_finite=False)
    U, s, V = U[:, :k], s[:k], Vt[:k].T
    signs = np.where(U.sum(axis=0) < 0, -1.0, 1.0)
    return SvdFactors(U * signs, s, V * signs)


def init_bases_from_svd(svd, n_source_bases, n_noise_bases):
    """Bases ``|u_j| * sqrt(s_j)``: the first ``n_source_bases`` columns form B_S."""
    K = n_source_bases + n_noise_bases
    if svd.rank_budget < K:
        raise InvalidInputError(
            f"SVD has {svd.rank_budget} components, {K} bases requested"
        )
    B = np.abs(svd.left_vectors[:, :K]) * np.sqrt(svd.singular_values[:K])
    np.maximum(B, EPS, out=B)
    return B[:, :n_source_bases].copy(), B[:, n_source_bases:].copy()


def init_bases_random(X, n_source_bases, n_noise_bases, seed):
    """Uniform random bases scaled to the data; alternative to the SVD start."""
    X = check_matrix(X, "X")
    rng = np.random.default_rng(seed)
    K = n_source_bases + n_noise_bases
    B = EPS + (1.0 - EPS) * (1.0 - rng.random((X.shape[0], K)))
    # gains are uniform on (0, 1], so E[B @ G] = K * E[B] / 2
    B *= 2.0 * X.mean() / (K * B.mean()) if X.mean() > 0 else 1.0
    np.maximum(B, EPS, out=B)
    return B[:, :n_source_bases].copy(), B[:, n_source_bases:].copy()


def init_gains_random(n_source_bases, n_noise_bases, n_frames, seed):
    """Gains drawn i.i.d. uniform on ``(EPS, 1]``, in the order G_S, G_V, H_V."""
    check_positive_int(n_source_bases, "n_source_bases")
    check_positive_int(n_noise_bases, "n_noise_bases", minimum=0)
    check_positive_int(n_frames, "n_frames")
    rng = np.random.default_rng(seed)

    def draw(rows):
        return EPS + (1.0 - EPS) * (1.0 - rng.random((rows, n_frames)))

    return draw(n_source_bases), draw(n_noise_bases), draw(n_noise_bases)


def kl_divergence(Z, Z_hat):
    """Generalized KL divergence ``sum(Z log(Z / Z_hat) - Z + Z_hat)``, with 0 log 0 = 0."""
    Z = check_matrix(Z, "Z", ndim=np.ndim(Z))
    Z_hat = check_matrix(Z_hat, "Z_hat", ndim=np.ndim(Z_hat))
    check_same_shape(Z, Z_hat, ("Z", "Z_hat"))
    if np.any(Z_hat <= 0):
        raise InvalidInputError("Z_hat must be strictly positive")
    return _kl(Z, Z_hat)


def _kl(Z, Z_hat):
    return float(np.sum(xlogy(Z, Z / Z_hat) - Z + Z_hat))


def orthogonality_penalty(B_S, beta_ortho):
    """``beta * (sum(B_S.T @ B_S) - trace(B_S.T @ B_S))``."""
    if not beta_ortho >= 0:
        raise InvalidInputError(f"beta_ortho must be non-negative, got {beta_ortho}")
    B_S = check_matrix(B_S, "B_S")
    return _penalty(B_S, beta_ortho)


def _penalty(B_S, beta_ortho):
    if beta_ortho == 0:
        return 0.0
    # sum of the Gram matrix is |B_S 1|^2, its trace is |B_S|_F^2
    row_sums = B_S.sum(axis=1)
    return float(beta_ortho * (row_sums @ row_sums - np.sum(B_S * B_S)))


def total_cost(model, X, Y):
    """Cost components of ``model`` on the internal/external spectrograms."""
    X = check_matrix(X, "X")
    Y = check_matrix(Y, "Y")
    check_same_shape(X, Y, ("X", "Y"))
    F, T, _, _ = model.shape
    if X.shape != (F, T):
        raise InvalidInputError(f"X has shape {X.shape}, model expects {(F, T)}")
    return _cost(X, Y, model.internal_model(), model.external_model(), model.B_S, model.beta_ortho)


class _Kernels:
    """Elementwise kernels, optionally split over row blocks in a thread pool.

    NumPy releases the GIL inside ufuncs, so row blocks run concurrently. The
    elementwise results are identical to the sequential ones; reductions
    differ only in summation order.
    """

    def __init__(self, n_threads=1):
        self.n_threads = n_threads
        self.pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _blocks(self, n_rows):
        edges = np.linspace(0, n_rows, self.n_threads + 1).astype(int)
        return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]

    def ratio(self, num, den):
        if self.pool is None:
            return num / den
        out = np.empty_like(num)
        list(self.pool.map(lambda s: np.divide(num[s], den[s], out=out[s]), self._blocks(num.shape[0])))
        return out

    def kl(self, Z, Z_hat):
        if self.pool is None:
            return _kl(Z, Z_hat)
        return float(sum(self.pool.map(lambda s: _kl(Z[s], Z_hat[s]), self._blocks(Z.shape[0]))))


def usable_cores():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def blas_limits(n_threads):
    """Limit BLAS to ``n_threads``, but never to more threads than usable cores.

    Oversubscribed BLAS pools spin-wait and can be orders of magnitude slower.
    """
    cores = usable_cores()
    if n_threads > cores:
        logger.info("%d threads requested, %d cores usable; BLAS limited to %d", n_threads, cores, cores)
    return threadpool_limits(limits=min(n_threads, cores), user_api="blas")


@contextmanager
def _compute_context(n_threads):
    kernels = _Kernels(n_threads)
    try:
        with blas_limits(n_threads):
            yield kernels
    finally:
        kernels.close()


def _cost(X, Y, X_hat, Y_hat, B_S, beta, kernels=None):
    kl = kernels.kl if kernels is not None else _kl
    kx = kl(X, X_hat)
    ky = kl(Y, Y_hat)
    pen = _penalty(B_S, beta)
    return CostEntry(kx, ky, pen, kx + ky + pen)


def _step(X, Y, B_S, B_V, G_S, G_V, H_V, beta, kernels, X_hat=None, Y_hat=None):
    """One pass of the five multiplicative updates.

    Bases are updated together from the current estimates, the estimates are
    recomputed, then the three gain matrices are updated together. Returns the
    new factors and the estimates they produce.
    """
    K_S = B_S.shape[1]
    if X_hat is None:
        X_hat = B_S @ G_S + B_V @ G_V
        Y_hat = B_V @ H_V
    R_X = kernels.ratio(X, X_hat)
    R_Y = kernels.ratio(Y, Y_hat)

    G = np.vstack([G_S, G_V])
    num = R_X @ G.T
    num_S, num_V = num[:, :K_S], num[:, K_S:]
    num_V += R_Y @ H_V.T
    den_S = G_S.sum(axis=1)
    den_V = G_V.sum(axis=1) + H_V.sum(axis=1)
    if beta:
        num_S += beta * B_S
        den_S = den_S + beta * B_S.sum(axis=1, keepdims=True)
    B_S = np.maximum(B_S * num_S / den_S, EPS)
    B_V = np.maximum(B_V * num_V / den_V, EPS)

    B = np.hstack([B_S, B_V])
    X_hat = B @ G
    Y_hat = B_V @ H_V
    R_X = kernels.ratio(X, X_hat)
    R_Y = kernels.ratio(Y, Y_hat)

    col_sums = B.sum(axis=0)[:, None]
    G = np.maximum(G * (B.T @ R_X) / col_sums, EPS)
    H_V = np.maximum(H_V * (B_V.T @ R_Y) / col_sums[K_S:], EPS)
    G_S, G_V = G[:K_S], G[K_S:]

    X_hat = B @ G
    Y_hat = B_V @ H_V
    return (B_S, B_V, G_S.copy(), G_V.copy(), H_V), X_hat, Y_hat


def _check_finite(arrays, iteration):
    for name, a in zip(("B_S", "B_V", "G_S", "G_V", "H_V"), arrays):
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite entries in {name}", iteration)


def update_step(model, X, Y, *, n_threads=1):
    """Apply one round of the multiplicative updates and return a new model."""
    X = check_matrix(X, "X")
    Y = check_matrix(Y, "Y")
    check_same_shape(X, Y, ("X", "Y"))
    F, T, _, _ = model.shape
    if X.shape != (F, T):
        raise InvalidInputError(f"X has shape {X.shape}, model expects {(F, T)}")
    with _compute_context(n_threads) as kernels:
        factors, _, _ = _step(X, Y, *model.factors(), model.beta_ortho, kernels)
    _check_finite(factors, model.n_iter + 1)
    return NmfModel(*factors, beta_ortho=model.beta_ortho, n_iter=model.n_iter + 1)


def initialize(X, cfg):
    """Initial :class:`NmfModel` for ``X`` (SVD or random bases, random gains)."""
    K_S, K_V = cfg.n_source_bases, cfg.n_noise_bases
    if cfg.init == "svd":
        svd = truncated_svd(X, K_S + K_V)
        B_S, B_V = init_bases_from_svd(svd, K_S, K_V)
    else:
        # separate stream from the gains
        B_S, B_V = init_bases_random(X, K_S, K_V, [cfg.seed, 1])
    G_S, G_V, H_V = init_gains_random(K_S, K_V, X.shape[1], cfg.seed)
    return NmfModel(B_S, B_V, G_S, G_V, H_V, beta_ortho=cfg.beta_ortho)


def factorize(X, Y, cfg=None, *, init_model=None):
    """Fit the joint model to internal ``X`` and external ``Y`` magnitudes.

    Returns ``(model, trace)``. ``trace[0]`` is the cost of the initial model
    and ``trace[i]`` the cost after ``i`` updates. ``init_model`` replaces the
    SVD/random initialization (it is not modified).
    """
    cfg = cfg or FactorizationConfig()
    X = check_matrix(X, "X")
    Y = check_matrix(Y, "Y")
    check_same_shape(X, Y, ("X", "Y"))
    if cfg.n_components > min(X.shape):
        raise InvalidInputError(
            f"{cfg.n_components} bases requested but min(F, T) = {min(X.shape)}"
        )

    beta = cfg.beta_ortho
    trace = CostTrace()
    # overflow surfaces as a non-finite cost and is reported as NumericalError
    with _compute_context(cfg.n_threads) as kernels, np.errstate(over="ignore", invalid="ignore"):
        model = initialize(X, cfg) if init_model is None else init_model
        if model.shape != (*X.shape, cfg.n_source_bases, cfg.n_noise_bases):
            raise InvalidInputError(f"initial model shape {model.shape} does not match data/config")
        factors = model.factors()
        X_hat, Y_hat = model.internal_model(), model.external_model()
        trace.append(_cost(X, Y, X_hat, Y_hat, factors[0], beta, kernels))
        calm = 0
        for it in range(1, cfg.max_iter + 1):
            factors, X_hat, Y_hat = _step(X, Y, *factors, beta, kernels, X_hat, Y_hat)
            entry = _cost(X, Y, X_hat, Y_hat, factors[0], beta, kernels)
            if not np.isfinite(entry.total):
                _check_finite(factors, it)
                raise NumericalError("non-finite cost", it)
            prev = trace[-1].total
            trace.append(entry)
            if entry.total > prev * (1 + COST_INCREASE_TOL):
                trace.increases.append(it)
                logger.debug("cost increased at iteration %d: %.6g -> %.6g", it, prev, entry.total)
            if cfg.early_stopping:
                change = abs(prev - entry.total) / max(abs(prev), np.finfo(float).tiny)
                calm = calm + 1 if change < cfg.tol else 0
                if calm >= PATIENCE:
                    break
    _check_finite(factors, it)
    if trace.increases:
        logger.info("total cost increased in %d of %d iterations", len(trace.increases), it)
    return NmfModel(*factors, beta_ortho=beta, n_iter=it), trace


def onmf_update(B, G, X):
    """One orthogonal-NMF update of ``(B, G)`` for single-channel data ``X``.

    ``B <- B * sqrt(X G^T / (B B^T X G^T))`` followed by
    ``G <- G * (B^T X) / (B^T B G)`` using the updated ``B``.
    """
    B = check_matrix(B, "B")
    G = check_matrix(G, "G")
    X = check_matrix(X, "X")
    if B.shape[1] != G.shape[0] or X.shape != (B.shape[0], G.shape[1]):
        raise InvalidInputError(f"inconsistent shapes B {B.shape}, G {G.shape}, X {X.shape}")
    tiny = np.finfo(float).tiny
    XGt = X @ G.T
    B = np.maximum(B * np.sqrt(XGt / np.maximum(B @ (B.T @ XGt), tiny)), EPS)
    G = np.maximum(G * (B.T @ X) / np.maximum((B.T @ B) @ G, tiny), EPS)
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(G))):
        raise NumericalError("non-finite entries in orthogonal NMF update")
    return B, G
