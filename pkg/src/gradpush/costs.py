"""Local cost ensembles: least squares and (possibly indefinite) quadratics.

Every local cost is quadratic, ``f_j(x) = 1/2 x^T H_j x + g_j^T x + c_j``, so
gradients, Hessians and the minimizer are all closed form.

Scaling convention: the engine uses the gradient of each ``f_j`` as written
(``1/2 ||A_j x - b_j||^2`` or ``1/2 x^T (I + C_j) x + d_j^T x``).  The total
cost the analysis works with is the average ``f = (1/n) sum_j f_j``, which is
what the network average actually descends on; ``beta`` is its strong
convexity constant and ``L = max_j L_j`` its smoothness constant.  The
minimizer is the same for the sum and the average.  ``beta_sum`` is kept for
reference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np

log = logging.getLogger(__name__)

Kind = Literal["least_squares", "quadratic"]


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CostEnsemble:
    kind: Kind
    n: int
    d: int
    # least squares: A (n, m, d), b (n, m); quadratic: C (n, d, d) symmetric, lin (n, d)
    data: dict[str, np.ndarray]
    m: int | None = None
    seed: int | None = None
    requested_seed: int | None = None

    def __post_init__(self):
        for arr in self.data.values():
            arr.setflags(write=False)

    @cached_property
    def hessians(self) -> np.ndarray:
        """Local Hessians, shape ``(n, d, d)``."""
        if self.kind == "least_squares":
            A = self.data["A"]
            return np.einsum("nki,nkj->nij", A, A)
        return np.eye(self.d)[None, :, :] + self.data["C"]

    @cached_property
    def linear_terms(self) -> np.ndarray:
        """``g_j`` with ``grad f_j(x) = H_j x + g_j``, shape ``(n, d)``."""
        if self.kind == "least_squares":
            return -np.einsum("nki,nk->ni", self.data["A"], self.data["b"])
        return self.data["lin"]

    @cached_property
    def w_star(self) -> np.ndarray:
        return np.linalg.solve(self.hessians.sum(axis=0), -self.linear_terms.sum(axis=0))

    @cached_property
    def local_smoothness(self) -> np.ndarray:
        """``L_i``: largest |eigenvalue| of each local Hessian."""
        return np.array([np.max(np.abs(np.linalg.eigvalsh(h))) for h in self.hessians])

    @property
    def L(self) -> float:
        return float(self.local_smoothness.max())

    @cached_property
    def beta_sum(self) -> float:
        return float(np.linalg.eigvalsh(self.hessians.sum(axis=0))[0])

    @property
    def beta(self) -> float:
        return self.beta_sum / self.n

    @cached_property
    def nonconvex_local(self) -> bool:
        if self.kind == "least_squares":
            return False  # Gram matrices are PSD; tiny negative eigenvalues are rounding
        return bool(any(np.linalg.eigvalsh(h)[0] < 0 for h in self.hessians))

    def local_value(self, agent: int, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "least_squares":
            r = self.data["A"][agent] @ x - self.data["b"][agent]
            return 0.5 * float(r @ r)
        return 0.5 * float(x @ self.hessians[agent] @ x) + float(self.data["lin"][agent] @ x)

    def value(self, x) -> float:
        """Average cost ``(1/n) sum_j f_j(x)``."""
        return sum(self.local_value(j, x) for j in range(self.n)) / self.n


def grad(ens: CostEnsemble, agent: int, x) -> np.ndarray:
    """Exact gradient of ``f_agent`` at ``x``."""
    if not 0 <= agent < ens.n:
        raise IndexError(f"agent {agent} out of range for n={ens.n}")
    x = np.asarray(x, dtype=float)
    if x.shape != (ens.d,):
        raise ValueError(f"expected a vector of length {ens.d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite point passed to agent {agent}'s gradient")
    if ens.kind == "least_squares":
        A = ens.data["A"][agent]
        return A.T @ (A @ x - ens.data["b"][agent])
    return ens.hessians[agent] @ x + ens.data["lin"][agent]


def grad_all(ens: CostEnsemble, X: np.ndarray) -> np.ndarray:
    """Stacked gradient ``col(grad f_1(x_1), ..., grad f_n(x_n))`` as an ``(n, d)`` array.

    Leading batch axes are allowed: ``X`` of shape ``(..., n, d)``.
    """
    if ens.kind == "least_squares":
        A, b = ens.data["A"], ens.data["b"]
        r = np.einsum("nki,...ni->...nk", A, X) - b
        return np.einsum("nki,...nk->...ni", A, r)
    return np.einsum("nij,...nj->...ni", ens.hessians, X) + ens.data["lin"]


def total_grad(ens: CostEnsemble, x) -> np.ndarray:
    """Gradient of the average cost at a single point."""
    x = np.asarray(x, dtype=float)
    return grad_all(ens, np.broadcast_to(x, (ens.n, ens.d))).mean(axis=0)


def constants(ens: CostEnsemble) -> tuple[np.ndarray, float, float]:
    """``(L_i, L, beta)``."""
    return ens.local_smoothness.copy(), ens.L, ens.beta


# -- constructors --------------------------------------------------------------

def least_squares_from_data(A, b, seed: int | None = None, requested_seed: int | None = None) -> CostEnsemble:
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    if A.ndim != 3 or b.shape != A.shape[:2]:
        raise ValueError(f"need A of shape (n, m, d) and b of shape (n, m); got {A.shape}, {b.shape}")
    n, m, d = A.shape
    return CostEnsemble("least_squares", n, d, {"A": A, "b": b}, m=m, seed=seed, requested_seed=requested_seed)


def quadratic_from_data(C, lin, seed: int | None = None, requested_seed: int | None = None) -> CostEnsemble:
    C = np.array(C, dtype=float)
    lin = np.array(lin, dtype=float)
    if C.ndim != 3 or C.shape[1] != C.shape[2] or lin.shape != C.shape[:2]:
        raise ValueError(f"need C of shape (n, d, d) and lin of shape (n, d); got {C.shape}, {lin.shape}")
    if not np.allclose(C, np.transpose(C, (0, 2, 1)), atol=0.0, rtol=0.0):
        raise ValueError("C_j must be symmetric")
    n, d, _ = C.shape
    return CostEnsemble("quadratic", n, d, {"C": C, "lin": lin}, seed=seed, requested_seed=requested_seed)


def least_squares_ensemble(n: int, d: int, m: int = 3, seed: int = 0, max_resamples: int = 100) -> CostEnsemble:
    """``f_j(x) = 1/2 ||A_j x - b_j||^2`` with standard normal ``A_j`` (m x d) and ``b_j``.

    Draws whose Gram matrix ``sum_j A_j^T A_j`` is singular are rejected and
    redrawn with seed+1, seed+2, ...; the seed actually used is kept on the
    ensemble.
    """
    if min(n, d, m) < 1:
        raise ValueError("n, d, m must all be >= 1")
    for k in range(max_resamples + 1):
        rng = np.random.default_rng(seed + k)
        A = rng.standard_normal((n, m, d))
        b = rng.standard_normal((n, m))
        ens = least_squares_from_data(A, b, seed=seed + k, requested_seed=seed)
        if ens.beta_sum > 1e-10 * max(ens.L, 1.0):
            if k:
                log.info("least squares: singular draw(s) rejected, used seed %d", seed + k)
            return ens
    raise EnsembleError(f"Gram matrix singular after {max_resamples} resamples (n={n}, d={d}, m={m})")


def _symmetric_normal(rng: np.random.Generator, d: int) -> np.ndarray:
    upper = np.triu(rng.standard_normal((d, d)))
    return upper + np.triu(upper, 1).T


def quadratic_ensemble(n: int, d: int, seed: int = 0, max_resamples: int = 1000) -> CostEnsemble:
    """``f_j(x) = 1/2 x^T (I + C_j) x + d_j^T x`` with symmetric standard normal ``C_j``.

    Individual ``f_j`` may be nonconvex.  If the total Hessian is not positive
    definite the whole ensemble is redrawn with the next seed.
    """
    if min(n, d) < 1:
        raise ValueError("n, d must be >= 1")
    for k in range(max_resamples + 1):
        rng = np.random.default_rng(seed + k)
        C = np.stack([_symmetric_normal(rng, d) for _ in range(n)])
        lin = rng.standard_normal((n, d))
        ens = quadratic_from_data(C, lin, seed=seed + k, requested_seed=seed)
        if ens.beta_sum > 0:
            if k:
                log.info("quadratic: nonconvex total rejected %d time(s), used seed %d", k, seed + k)
            return ens
    raise EnsembleError(f"total cost still nonconvex after {max_resamples} resamples (n={n}, d={d})")


# -- serialization -------------------------------------------------------------

def _fmt(arr: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(arr))


def dumps(ens: CostEnsemble) -> str:
    seed = "none" if ens.seed is None else str(ens.seed)
    lines = [f"kind={ens.kind}", f"n={ens.n}", f"d={ens.d}", f"m={ens.m if ens.m is not None else 'none'}",
             f"seed={seed}"]
    if ens.kind == "least_squares":
        for j in range(ens.n):
            lines.append(f"A[{j}]={_fmt(ens.data['A'][j])}")
            lines.append(f"b[{j}]={_fmt(ens.data['b'][j])}")
    else:
        for j in range(ens.n):
            lines.append(f"C[{j}]={_fmt(ens.data['C'][j])}")
            lines.append(f"lin[{j}]={_fmt(ens.data['lin'][j])}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> CostEnsemble:
    fields: dict[str, str] = {}
    for ln in text.splitlines():
        if ln.strip():
            key, _, val = ln.partition("=")
            fields[key.strip()] = val.strip()
    kind = fields["kind"]
    n, d = int(fields["n"]), int(fields["d"])
    seed = None if fields.get("seed", "none") == "none" else int(fields["seed"])

    def block(name: str, j: int, shape) -> np.ndarray:
        return np.array([float(v) for v in fields[f"{name}[{j}]"].split()]).reshape(shape)

    if kind == "least_squares":
        m = int(fields["m"])
        A = np.stack([block("A", j, (m, d)) for j in range(n)])
        b = np.stack([block("b", j, (m,)) for j in range(n)])
        return least_squares_from_data(A, b, seed=seed)
    if kind == "quadratic":
        C = np.stack([block("C", j, (d, d)) for j in range(n)])
        lin = np.stack([block("lin", j, (d,)) for j in range(n)])
        return quadratic_from_data(C, lin, seed=seed)
    raise ValueError(f"unknown ensemble kind {kind!r}")


def save(ens: CostEnsemble, path) -> None:
    Path(path).write_text(dumps(ens))


def load(path) -> CostEnsemble:
    return loads(Path(path).read_text())
