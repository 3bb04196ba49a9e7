"""The gradient-push iteration and its per-iteration diagnostics.

One step, in this order::

    w+ = (W (x) I_d) x
    y+ = W y
    z+_i = w+_i / y+_i
    x+ = w+ - alpha * grad F(z+)

The initial state has ``y(0) = 1`` and ``w(0) = z(0) = x0``.  When the
stepsize and costs are known at initialization, ``x(0)`` is set to
``w(0) - alpha * grad F(z(0))`` so the state obeys every relation of the
iteration at ``t = 0`` as well; in particular
``w(t+1) = (W (x) I_d)(w(t) - alpha grad F(z(t)))`` holds for all ``t >= 0``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .costs import CostEnsemble, grad_all
from .mixing import MixingMatrix

CSV_COLUMNS = ("t", "A", "B", "delta", "consensus_z", "grad_norm", "sum_sq_err")


class DivergenceError(FloatingPointError):
    def __init__(self, t: int, agent: int, record: "RunRecord | None" = None):
        super().__init__(f"non-finite state at t={t}, agent {agent}")
        self.t = t
        self.agent = agent
        self.record = record


@dataclass(frozen=True, eq=False)
class GPState:
    t: int
    w: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)
    z: np.ndarray  # (n, d)
    x: np.ndarray  # (n, d)

    @property
    def w_bar(self) -> np.ndarray:
        return self.w.mean(axis=0)


def init_state(x0, ens: CostEnsemble | None = None, alpha: float = 0.0) -> GPState:
    """Start from ``x0`` (an ``(n, d)`` array or a list of n d-vectors)."""
    x0 = np.array(x0, dtype=float)
    if x0.ndim != 2:
        raise ValueError(f"x0 must have shape (n, d), got {x0.shape}")
    n = x0.shape[0]
    x = x0.copy()
    if ens is not None and alpha != 0.0:
        x = x0 - alpha * grad_all(ens, x0)
    return GPState(t=0, w=x0.copy(), y=np.ones(n), z=x0.copy(), x=x)


def step(state: GPState, mix: MixingMatrix, ens: CostEnsemble, alpha: float) -> GPState:
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    with np.errstate(over="ignore", invalid="ignore"):
        w = mix.W @ state.x
        y = mix.W @ state.y
        z = w / y[:, None]
        x = w - alpha * grad_all(ens, z)
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
        raise DivergenceError(state.t + 1, bad)
    return GPState(t=state.t + 1, w=w, y=y, z=z, x=x)


def trajectory(mix: MixingMatrix, ens: CostEnsemble, alpha: float, iters: int, x0) -> Iterator[GPState]:
    """Yield the states for ``t = 0 .. iters``."""
    state = init_state(x0, ens, alpha)
    yield state
    for _ in range(iters):
        state = step(state, mix, ens, alpha)
        yield state


def default_x0(n: int, d: int) -> np.ndarray:
    return np.ones((n, d))


@dataclass
class RunRecord:
    t: np.ndarray
    A: np.ndarray
    B: np.ndarray
    delta: np.ndarray
    consensus_z: np.ndarray
    grad_norm: np.ndarray
    sum_sq_err: np.ndarray
    alpha: float | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def iterations(self) -> int:
        return len(self.t) - 1

    @property
    def empirical_delta(self) -> float:
        return float(self.delta[-1])

    def row(self, i: int) -> dict[str, float]:
        return {c: getattr(self, c)[i] for c in CSV_COLUMNS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for i in range(len(self)):
            writer.writerow([int(self.t[i])] + [repr(float(getattr(self, c)[i])) for c in CSV_COLUMNS[1:]])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, alpha: float | None = None) -> "RunRecord":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [r for r in reader if r]
        cols = list(zip(*rows)) if rows else [()] * len(CSV_COLUMNS)
        t = np.array([int(v) for v in cols[0]], dtype=int)
        rest = {c: np.array([float(v) for v in col]) for c, col in zip(CSV_COLUMNS[1:], cols[1:])}
        return cls(t=t, alpha=alpha, **rest)

    @classmethod
    def load_csv(cls, path, alpha: float | None = None) -> "RunRecord":
        return cls.from_csv(Path(path).read_text(), alpha=alpha)


def batch_diagnostics(w: np.ndarray, y: np.ndarray, z: np.ndarray, mix: MixingMatrix,
                      ens: CostEnsemble) -> tuple[np.ndarray, ...]:
    """Diagnostics for a stack of states: ``w``, ``z`` of shape ``(k, n, d)``, ``y`` of shape ``(k, n)``.

    Returns ``(A, B, consensus_z, grad_norm, sum_sq_err, max_inv_y)``, each of length k.
    """
    pi = mix.pi[None, :, None]
    w_bar = w.mean(axis=1)
    a = np.linalg.norm(w_bar - ens.w_star, axis=-1)
    gap = w - mix.n * pi * w_bar[:, None, :]
    b = np.sqrt(np.sum(gap**2 / pi, axis=(1, 2)))
    cz = np.max(np.linalg.norm(z - z.mean(axis=1, keepdims=True), axis=-1), axis=1)
    gn = np.sqrt(np.sum(grad_all(ens, z) ** 2, axis=(1, 2)))
    sq = np.sum((z - ens.w_star) ** 2, axis=(1, 2))
    return a, b, cz, gn, sq, np.max(1.0 / y, axis=1)


def diagnostics(state: GPState, mix: MixingMatrix, ens: CostEnsemble) -> tuple[float, float, float, float, float]:
    """``(A_t, B_t, consensus_z, grad_norm, sum_sq_err)`` for one state."""
    out = batch_diagnostics(state.w[None], state.y[None], state.z[None], mix, ens)
    return tuple(float(v[0]) for v in out[:5])


def run(mix: MixingMatrix, ens: CostEnsemble, alpha: float, iters: int, x0=None,
        chunk: int = 2048) -> RunRecord:
    """Run ``iters`` steps and record one diagnostics row per iterate (``iters + 1`` rows).

    States are buffered ``chunk`` at a time and their diagnostics computed in
    one vectorized pass.  On divergence a :class:`DivergenceError` is raised
    whose ``record`` attribute holds the rows computed so far.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    if mix.n != ens.n:
        raise ValueError(f"graph has {mix.n} agents but ensemble has {ens.n}")
    if x0 is None:
        x0 = default_x0(ens.n, ens.d)
    n, d = ens.n, ens.d
    cols = np.empty((len(CSV_COLUMNS), iters + 1))
    bw = np.empty((chunk, n, d))
    by = np.empty((chunk, n))
    bz = np.empty((chunk, n, d))
    done = 0  # rows whose diagnostics are in cols
    fill = 0  # states buffered

    def flush() -> None:
        nonlocal done, fill
        if not fill:
            return
        with np.errstate(over="ignore"):  # a finite but huge state may square to inf
            out = batch_diagnostics(bw[:fill], by[:fill], bz[:fill], mix, ens)
        sl = slice(done, done + fill)
        a, b, cz, gn, sq, inv_y = out
        cols[:, sl] = np.array([np.arange(done, done + fill), a, b, inv_y, cz, gn, sq])
        done += fill
        fill = 0

    def finish() -> RunRecord:
        c = cols[:, :done]
        c[3] = np.maximum.accumulate(c[3]) if done else c[3]
        return RunRecord(
            t=c[0].astype(int), A=c[1].copy(), B=c[2].copy(), delta=c[3].copy(),
            consensus_z=c[4].copy(), grad_norm=c[5].copy(), sum_sq_err=c[6].copy(), alpha=alpha,
        )

    try:
        for state in trajectory(mix, ens, alpha, iters, x0):
            bw[fill], by[fill], bz[fill] = state.w, state.y, state.z
            fill += 1
            if fill == chunk:
                flush()
    except DivergenceError as exc:
        flush()
        exc.record = finish()
        raise
    flush()
    return finish()


def push_sum_weights(mix: MixingMatrix, iters: int) -> np.ndarray:
    """``y(t) = W^t 1_n`` for ``t = 0 .. iters``, shape ``(iters + 1, n)``."""
    ys = np.empty((iters + 1, mix.n))
    ys[0] = 1.0
    for t in range(iters):
        ys[t + 1] = mix.W @ ys[t]
    return ys


def empirical_delta(mix: MixingMatrix, max_iters: int = 100_000) -> float:
    """Surrogate for ``sup_t max_i 1/y_i(t)``.

    The push-sum weights do not depend on the stepsize, so the sup can be
    evaluated directly: iterate ``y`` until it stops moving in floating
    point, then take the larger of the running max and the limit value
    ``max_i 1/(n pi_i)``.  Stationarity of ``y`` itself is the stopping rule
    because ``pi`` is only known to the power-iteration tolerance.
    """
    eps = np.finfo(float).eps
    y = np.ones(mix.n)
    best = 1.0
    for _ in range(max_iters):
        y_next = mix.W @ y
        best = max(best, float(np.max(1.0 / y_next)))
        if np.max(np.abs(y_next - y)) <= 2 * eps * np.max(y):
            break
        y = y_next
    return max(best, float(np.max(1.0 / (mix.n * mix.pi))))


def gradient_descent(ens: CostEnsemble, alpha: float, iters: int, x0) -> np.ndarray:
    """Centralized gradient descent on the average cost; returns all iterates."""
    x = np.array(x0, dtype=float)
    out = [x.copy()]
    for _ in range(iters):
        x = x - alpha * np.mean(grad_all(ens, np.broadcast_to(x, (ens.n, ens.d))), axis=0)
        out.append(x.copy())
    return np.array(out)


def is_finite_record(rec: RunRecord) -> bool:
    return all(np.all(np.isfinite(getattr(rec, c))) for c in CSV_COLUMNS[1:]) and math.isfinite(rec.empirical_delta)
