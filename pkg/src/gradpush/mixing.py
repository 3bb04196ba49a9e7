"""Column-stochastic mixing matrix and the spectral objects built from it.

All matrices are dense.  Stacked agent vectors are handled as ``(n, d)``
arrays (row ``j`` is agent ``j``'s block); flat ``n*d`` vectors are accepted
and reshaped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .digraph import DiGraph, validate

PERRON_TOL = 1e-13
PERRON_MAX_ITERS = 100_000


class PerronConvergenceError(RuntimeError):
    def __init__(self, residual: float, iters: int):
        super().__init__(
            f"power iteration did not converge after {iters} iterations "
            f"(residual {residual:.3e}); W may not be primitive"
        )
        self.residual = residual
        self.iters = iters


class ContractionError(RuntimeError):
    """sigma_W came out >= 1: graph assumptions violated or numerical failure."""

    def __init__(self, value: float):
        super().__init__(f"sigma_W = {value!r} is not < 1")
        self.value = value


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    n: int
    W: np.ndarray
    pi: np.ndarray
    w_inf: np.ndarray
    sigma_w: float

    @property
    def pi_a(self) -> float:
        return float(self.pi.min())

    @property
    def pi_b(self) -> float:
        return float(self.pi.max())

    @property
    def norm_1n_minus_npi(self) -> float:
        """||1_n - n*pi||_pi, the initial push-sum weight imbalance."""
        return pi_norm(np.ones(self.n) - self.n * self.pi, self.pi)

    @property
    def sqrt_sum_inv_pi(self) -> float:
        return math.sqrt(float(np.sum(1.0 / self.pi)))


def weight_matrix(g: DiGraph) -> np.ndarray:
    """``W[i, j] = 1/d_j`` when ``(j, i)`` is an arc, else 0."""
    W = np.zeros((g.n, g.n))
    for j, i in g.arcs:
        W[i, j] = 1.0 / g.out_degree[j]
    return W


def perron_vector(W: np.ndarray, tol: float = PERRON_TOL, max_iters: int = PERRON_MAX_ITERS) -> np.ndarray:
    """Positive right eigenvector of a primitive column-stochastic ``W``, summing to 1.

    Power iteration from the uniform vector.  Since ``1^T W = 1^T`` the
    iterates keep unit sum, so no renormalization is needed except to
    wash out rounding drift.
    """
    n = W.shape[0]
    v = np.full(n, 1.0 / n)
    residual = math.inf
    for k in range(max_iters + 1):
        wv = W @ v
        residual = float(np.max(np.abs(wv - v)))
        if residual <= tol:
            break
        v = wv / wv.sum()
    else:
        raise PerronConvergenceError(residual, max_iters)
    if np.any(v <= 0):
        raise PerronConvergenceError(residual, k)
    return v


def _as_blocks(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size % n:
            raise ValueError(f"vector of length {x.size} does not split into {n} blocks")
        return x.reshape(n, -1)
    if x.ndim == 2 and x.shape[0] == n:
        return x
    raise ValueError(f"expected {n} blocks, got array of shape {x.shape}")


def pi_norm(x, pi) -> float:
    """Blockwise weighted norm ``sqrt(sum_j ||x_j||^2 / pi_j)``."""
    pi = np.asarray(pi, dtype=float)
    blocks = _as_blocks(x, pi.size)
    return math.sqrt(float(np.sum(np.sum(blocks**2, axis=1) / pi)))


def similarity(A: np.ndarray, pi) -> np.ndarray:
    """``diag(sqrt(pi))^-1 A diag(sqrt(pi))``."""
    s = np.sqrt(np.asarray(pi, dtype=float))
    A = np.asarray(A, dtype=float)
    if A.shape != (s.size, s.size):
        raise ValueError(f"matrix shape {A.shape} does not match pi of length {s.size}")
    return A * s[None, :] / s[:, None]


def pi_matrix_norm(A, pi) -> float:
    """Operator norm induced by ``||.||_pi``; also the norm of ``A (x) I_d`` for any d."""
    return float(np.linalg.svd(similarity(A, pi), compute_uv=False)[0])


def sigma_w(mix: MixingMatrix) -> float:
    value = pi_matrix_norm(mix.W - mix.w_inf, mix.pi)
    if not value < 1.0:
        raise ContractionError(value)
    return value


def build_mixing(g: DiGraph) -> MixingMatrix:
    """Validate ``g`` and assemble W, its Perron vector, W^inf and sigma_W."""
    validate(g)
    W = weight_matrix(g)
    pi = perron_vector(W)
    w_inf = np.outer(pi, np.ones(g.n))
    for arr in (W, pi, w_inf):
        arr.setflags(write=False)
    mix = MixingMatrix(n=g.n, W=W, pi=pi, w_inf=w_inf, sigma_w=math.nan)
    object.__setattr__(mix, "sigma_w", sigma_w(mix))
    return mix


def consensus_gap(mix: MixingMatrix, w) -> np.ndarray:
    """``w - (W^inf (x) I_d) w``, i.e. ``w - n*pi (x) mean(w)``."""
    blocks = _as_blocks(w, mix.n)
    return blocks - mix.n * np.outer(mix.pi, blocks.mean(axis=0))


def power_gap(mix: MixingMatrix, t: int) -> np.ndarray:
    """``W^t - W^inf``."""
    return np.linalg.matrix_power(mix.W, t) - mix.w_inf


def power_convergence_constants(mix: MixingMatrix, max_steps: int = 100_000) -> tuple[float, float]:
    """Measured ``(D, zeta)`` with ``||W^s - W^inf||_2 <= D zeta^s`` for all ``s >= 0``.

    ``zeta`` is sigma_W.  ``D`` is the worst observed ratio over the decay,
    scanned until ``zeta^s`` falls below 1e-12; past that point the gap is
    rounding noise.  The proved constant sqrt(pi_b/pi_a) always dominates it.
    """
    zeta = mix.sigma_w
    gap = np.eye(mix.n) - mix.w_inf
    D = float(np.linalg.norm(gap, 2))
    if zeta <= 0.0:
        return D, 0.0
    P = np.eye(mix.n)
    scale = 1.0
    for _ in range(max_steps):
        P = P @ mix.W
        scale *= zeta
        if scale < 1e-12:
            break
        D = max(D, float(np.linalg.norm(P - mix.w_inf, 2)) / scale)
    return D, zeta
