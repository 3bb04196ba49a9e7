"""Convergence constants, the stepsize gate, trajectory envelopes and inequality monitors.

Conventions used throughout:

* ``delta`` is the surrogate ``max(running max_t max_i 1/y_i(t), max_i 1/(n pi_i))``
  (see :func:`gradpush.engine.empirical_delta`).
* ``rho = sigma_W (1 + alpha L delta)``; the same definition is used for
  both envelopes.
* In the decay base of the third term of the average-error envelope the
  unspecified constant ``e^{-c}`` is taken to be sigma_W, the rate at which
  that term's driving sequence ``||1_n - n pi||_pi sigma_W^t`` decays.
* ``kappa(t)`` appears in two hypotheses but in no formula; it is ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .costs import CostEnsemble, grad_all, total_grad
from .mixing import MixingMatrix, consensus_gap, pi_norm, power_convergence_constants

MONITOR_RTOL = 1e-9
E_C_SUBSTITUTION = "e^{-c} evaluated as sigma_W"


class StepsizeError(ValueError):
    """The stepsize fails the boundedness gate, so the radius R is undefined."""


@dataclass(frozen=True)
class TheoryConstants:
    alpha: float
    n: int
    L: float
    beta: float
    gamma: float
    delta: float
    sigma_w: float
    rho: float
    D1: float
    D2: float
    b: float
    t0: int
    R: float
    alpha_max_smooth: float
    alpha_max_gate: float
    norm_1n_minus_npi: float
    gradF_at_wstar_pinorm: float
    sqrt_sum_inv_pi: float
    w_star_norm: float
    radius_denominator: float
    notes: tuple[str, ...] = field(default=(E_C_SUBSTITUTION,))

    def D1_at(self, t) -> float:
        return self.delta * self.norm_1n_minus_npi * self.sigma_w**t + self.sqrt_sum_inv_pi

    def D2_at(self, t) -> float:
        return (self.L * self.delta * self.norm_1n_minus_npi * self.sigma_w**t * self.w_star_norm
                + self.gradF_at_wstar_pinorm)

    @property
    def R_bar(self) -> float:
        return self.L * self.D1 * self.R + self.D2

    def with_radius(self, R: float) -> "TheoryConstants":
        return replace(self, R=float(R))

    def as_dict(self) -> dict[str, float]:
        return {k: v for k, v in self.__dict__.items() if k != "notes"}


def _t0(L: float, delta: float, n: int, imbalance: float, sigma: float, gamma: float) -> int:
    coeff = L * delta / n * imbalance
    t = 0
    while coeff * sigma**t > gamma / 2:
        t += 1
    return t


def compute_constants(mix: MixingMatrix, ens: CostEnsemble, alpha: float, delta: float | None = None,
                      *, check_gate: bool = True) -> TheoryConstants:
    """Evaluate every constant of the boundedness and convergence theorems for one instance.

    ``R`` holds the trajectory-independent part of the radius,
    ``max(2 ||w_*||, sigma alpha D2 / (b(1-sigma) - alpha L sigma (delta b + D1)))``;
    :func:`theorem_radius` folds in ``A_{t0}`` and ``B_{t0}/b``.

    With ``check_gate`` (default) a nonpositive radius denominator raises
    :class:`StepsizeError`; otherwise ``R`` is set to ``inf`` so the gate can
    still be evaluated.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if mix.n != ens.n:
        raise ValueError(f"graph has {mix.n} agents but ensemble has {ens.n}")
    floor_delta = float(np.max(1.0 / (mix.n * mix.pi)))
    if delta is None:
        delta = engine.empirical_delta(mix)
    if delta < floor_delta * (1 - 1e-12):
        raise ValueError(f"delta={delta} is below its lower bound max_i 1/(n pi_i) = {floor_delta}")
    n, L, beta, sigma = mix.n, ens.L, ens.beta, mix.sigma_w
    gamma = beta * L / (beta + L)
    imbalance = mix.norm_1n_minus_npi
    ssip = mix.sqrt_sum_inv_pi
    wsn = float(np.linalg.norm(ens.w_star))
    gf = pi_norm(grad_all(ens, np.tile(ens.w_star, (n, 1))), mix.pi)
    D1 = delta * imbalance + ssip
    D2 = L * delta * imbalance * wsn + gf
    b = n * gamma / (4 * L * delta)
    rho = sigma * (1 + alpha * L * delta)
    gate_inner = delta * b + delta * imbalance + ssip
    alpha_gate = math.inf if sigma == 0 else b * (1 - sigma) / (L * sigma * gate_inner)
    denom = b * (1 - sigma) - alpha * L * sigma * gate_inner
    if denom > 0:
        R = max(2 * wsn, sigma * alpha * D2 / denom)
    elif check_gate:
        raise StepsizeError(
            f"alpha={alpha} makes the radius denominator nonpositive ({denom:.3e}); "
            "check it with stepsize_gate first"
        )
    else:
        R = math.inf
    return TheoryConstants(
        alpha=float(alpha), n=n, L=L, beta=beta, gamma=gamma, delta=float(delta), sigma_w=sigma, rho=rho,
        D1=D1, D2=D2, b=b, t0=_t0(L, delta, n, imbalance, sigma, gamma), R=R,
        alpha_max_smooth=2 / (L + beta), alpha_max_gate=alpha_gate, norm_1n_minus_npi=imbalance,
        gradF_at_wstar_pinorm=gf, sqrt_sum_inv_pi=ssip, w_star_norm=wsn, radius_denominator=denom,
    )


@dataclass(frozen=True)
class GateVerdict:
    admissible: bool
    reason: str | None = None

    def __bool__(self):
        return self.admissible

    def __str__(self):
        return "admissible" if self.admissible else f"rejected({self.reason})"


def stepsize_gate(consts: TheoryConstants, alpha: float | None = None) -> GateVerdict:
    """Both stepsize conditions of the boundedness theorem.

    ``alpha <= 2/(L+beta)`` (non-strict) and ``alpha < b(1-sigma)/(L sigma (...))``
    (strict, vacuous when sigma_W = 0).
    """
    alpha = consts.alpha if alpha is None else alpha
    if not alpha > 0:
        return GateVerdict(False, f"alpha={alpha} is not positive")
    if alpha > consts.alpha_max_smooth:
        return GateVerdict(False, f"alpha={alpha} > 2/(L+beta)={consts.alpha_max_smooth!r}")
    if not alpha < consts.alpha_max_gate:
        return GateVerdict(False, f"alpha={alpha} >= network bound {consts.alpha_max_gate!r}")
    return GateVerdict(True)


def theorem_radius(consts: TheoryConstants, A_t0: float, B_t0: float) -> float:
    """The boundedness radius ``R = max{A_t0, B_t0/b, 2||w_*||, ...}``."""
    return float(max(A_t0, B_t0 / consts.b, consts.R))


def _power(base: float, t):
    return np.power(base, np.asarray(t, dtype=float))


def envelope_B(consts: TheoryConstants, B0: float, t):
    """``rho^t B0 + alpha sigma R_bar / (1 - rho)`` (vectorized over t)."""
    if not consts.rho < 1:
        raise ValueError(f"rho={consts.rho} >= 1: the weighted-consensus envelope does not apply")
    return _power(consts.rho, t) * B0 + consts.alpha * consts.sigma_w * consts.R_bar / (1 - consts.rho)


def _t_times_power(base: float, t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = t[pos] * np.power(base, t[pos] - 1)
    return out if out.ndim else float(out)


def envelope_A(consts: TheoryConstants, A0: float, B0: float, t):
    """Four-term envelope for ``||w_bar(t) - w_*||`` (vectorized over t)."""
    c = consts
    contraction = 1 - c.gamma * c.alpha
    base2 = max(contraction, c.rho)
    base3 = max(contraction, c.sigma_w)
    if not (c.rho < 1 and base2 < 1):
        raise ValueError(f"decay base max(1-gamma*alpha, rho)={base2} is not < 1")
    k = c.alpha * c.L * c.delta / c.n
    floor = k * c.sigma_w * c.R_bar / (c.gamma * (1 - c.rho))
    return (_power(contraction, t) * A0
            + k * B0 * _t_times_power(base2, t)
            + k * c.norm_1n_minus_npi * (c.w_star_norm + c.R) * _t_times_power(base3, t)
            + floor)


def floor_terms(consts: TheoryConstants) -> tuple[float, float]:
    """The additive O(alpha) floors of the two envelopes."""
    c = consts
    fb = c.alpha * c.sigma_w * c.R_bar / (1 - c.rho)
    return fb, c.alpha * c.L * c.delta / c.n * fb / c.gamma


def scalar_recursions(Y0: float, alpha: float, C: float, rho: float, t: int) -> tuple[float, float]:
    """Closed-form bounds for ``Y+ <= (1-alpha) Y + C`` and ``Y+ <= (1-alpha) Y + C rho^t``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    if t < 0:
        raise ValueError("t must be >= 0")
    decay = (1 - alpha) ** t * Y0
    b81 = decay + C / alpha
    b82 = decay + (C * t * max(1 - alpha, rho) ** (t - 1) if t > 0 else 0.0)
    return b81, b82


def iterate_recursions(consts: TheoryConstants, A0: float, B0: float, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Run the coupled worst-case recursions for ``(A_t, B_t)`` forward with equality."""
    c = consts
    A = np.empty(T + 1)
    B = np.empty(T + 1)
    A[0], B[0] = A0, B0
    k = c.alpha * c.L * c.delta / c.n
    for t in range(T):
        s = c.norm_1n_minus_npi * c.sigma_w**t
        A[t + 1] = (1 - c.gamma * c.alpha + k * s) * A[t] + k * B[t] + k * s * c.w_star_norm
        B[t + 1] = c.rho * B[t] + c.sigma_w * c.alpha * c.L * c.D1 * A[t] + c.alpha * c.sigma_w * c.D2
    return A, B


# -- trajectory checks -----------------------------------------------------------

@dataclass
class Violation:
    family: str
    t: int
    lhs: float
    rhs: float

    def __str__(self):
        return f"{self.family} t={self.t} lhs={self.lhs!r} rhs={self.rhs!r}"


@dataclass
class FamilyStats:
    checked: int = 0
    violations: int = 0
    worst_margin: float = math.inf  # min over t of (rhs - lhs) / (1 + |rhs|)
    skipped: str | None = None


@dataclass
class MonitorReport:
    families: dict[str, FamilyStats] = field(default_factory=dict)
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    max_listed: int = 100

    @property
    def ok(self) -> bool:
        return not any(f.violations for f in self.families.values())

    def check(self, family: str, t: int, lhs: float, rhs: float, rtol: float = MONITOR_RTOL) -> None:
        st = self.families.setdefault(family, FamilyStats())
        st.checked += 1
        margin = (rhs - lhs) / (1 + abs(rhs))
        st.worst_margin = float(min(st.worst_margin, margin))
        if not lhs <= rhs + rtol * (1 + abs(rhs)):
            st.violations += 1
            if len(self.violations) < self.max_listed:
                self.violations.append(Violation(family, t, float(lhs), float(rhs)))

    def skip(self, family: str, why: str) -> None:
        self.families[family] = FamilyStats(skipped=why)

    def merge(self, other: "MonitorReport") -> "MonitorReport":
        self.families.update(other.families)
        self.violations.extend(other.violations)
        self.notes.extend(other.notes)
        return self

    def to_text(self) -> str:
        lines = []
        for name, st in self.families.items():
            if st.skipped:
                lines.append(f"{name:28s} skipped: {st.skipped}")
            else:
                status = "ok" if not st.violations else "VIOLATED"
                lines.append(f"{name:28s} {status:8s} checked={st.checked} violations={st.violations} "
                             f"worst_margin={st.worst_margin:.3e}")
        lines.extend(f"note: {n}" for n in self.notes)
        lines.extend(f"violation: {v}" for v in self.violations)
        return "\n".join(lines)

    def to_kv(self) -> str:
        lines = [f"ok={str(self.ok).lower()}"]
        for name, st in self.families.items():
            if st.skipped:
                lines.append(f"{name}.skipped=true")
                continue
            lines.append(f"{name}.checked={st.checked}")
            lines.append(f"{name}.violations={st.violations}")
            lines.append(f"{name}.worst_margin={st.worst_margin!r}")
        return "\n".join(lines)


def _replay(record: engine.RunRecord, mix: MixingMatrix, ens: CostEnsemble, alpha: float, x0) -> list[engine.GPState]:
    states = list(engine.trajectory(mix, ens, alpha, record.iterations, x0))
    for s in states:
        a, b, *_ = engine.diagnostics(s, mix, ens)
        ra, rb = record.A[s.t], record.B[s.t]
        if not (math.isclose(a, ra, rel_tol=1e-9, abs_tol=1e-12) and math.isclose(b, rb, rel_tol=1e-9, abs_tol=1e-12)):
            raise ValueError(
                f"record does not match a replay with the given inputs at t={s.t} "
                f"(A {ra!r} vs {a!r}, B {rb!r} vs {b!r})"
            )
    return states


def monitor_inequalities(record: engine.RunRecord, consts: TheoryConstants, mix: MixingMatrix,
                         ens: CostEnsemble, alpha: float, x0=None) -> MonitorReport:
    """Check every proved step inequality along a recorded trajectory.

    The trajectory is replayed from ``(mix, ens, alpha, x0)`` to recover the
    full states; a record that does not match the replay raises
    ``ValueError``.  Each check passes when ``lhs <= rhs + 1e-9 (1 + |rhs|)``.
    """
    if not math.isclose(alpha, consts.alpha, rel_tol=1e-15):
        raise ValueError(f"constants were computed for alpha={consts.alpha}, not {alpha}")
    if record.alpha is not None and not math.isclose(alpha, record.alpha, rel_tol=1e-15):
        raise ValueError(f"record was produced with alpha={record.alpha}, not {alpha}")
    if x0 is None:
        x0 = engine.default_x0(ens.n, ens.d)
    states = _replay(record, mix, ens, alpha, x0)
    if float(np.max(record.delta)) > consts.delta * (1 + 1e-12):
        raise ValueError(f"delta={consts.delta} does not dominate the recorded weights (max {np.max(record.delta)})")

    c = consts
    rep = MonitorReport(notes=[E_C_SUBSTITUTION, "kappa(t) ignored: appears in no formula"])
    n, pi = mix.n, mix.pi
    w_star = ens.w_star
    k = alpha * c.L * c.delta / n
    sigma = c.sigma_w
    smooth_ok = alpha <= c.alpha_max_smooth
    D, zeta = power_convergence_constants(mix)
    w0_norm = float(np.linalg.norm(states[0].w))
    sup_grad = float(np.max(record.grad_norm))
    intuition_floor = alpha * D * zeta / (1 - zeta) * sup_grad
    rep.notes.append(f"intuition bound uses measured D={D!r}, zeta={zeta!r}, sup||grad F(z)||={sup_grad!r}")
    npi = n * pi
    A, B = record.A, record.B

    for s in states:
        t = s.t
        st = sigma**t
        w_bar = s.w_bar
        # push-sum weight decay
        rep.check("push_sum_decay", t, pi_norm(s.y - npi, pi), st * c.norm_1n_minus_npi)
        # consensus of z around the average
        zc = pi_norm(s.z - w_bar, pi)
        rep.check("z_consensus", t, zc, c.delta * B[t] + c.delta * c.norm_1n_minus_npi * st * (A[t] + c.w_star_norm))
        # unweighted consensus of w under bounded gradients (Euclidean norm)
        rep.check("intuition_consensus", t, float(np.linalg.norm(consensus_gap(mix, s.w))),
                  D * zeta**t * w0_norm + intuition_floor)
        # coercivity of the average cost at (w_bar(t), w_*)
        g = total_grad(ens, w_bar) - total_grad(ens, w_star)
        diff = w_bar - w_star
        rep.check("coercivity", t,
                  c.gamma * float(diff @ diff) + float(g @ g) / (c.L + c.beta), float(g @ diff))
        if smooth_ok:
            step_vec = diff - alpha * total_grad(ens, w_bar)
            rep.check("gd_contraction", t, float(np.linalg.norm(step_vec)), (1 - c.gamma * alpha) * A[t])
        if t == record.iterations:
            continue
        # one-step recursions t -> t+1
        rep.check("weighted_consensus_step", t, B[t + 1],
                  c.rho * B[t] + alpha * c.L * sigma * c.D1_at(t) * A[t] + alpha * sigma * c.D2_at(t))
        rep.check("recursion_B", t, B[t + 1], c.rho * B[t] + sigma * alpha * c.L * c.D1 * A[t] + alpha * sigma * c.D2)
        if smooth_ok:
            s_imb = c.norm_1n_minus_npi * st
            rep.check("average_step_vs_z", t, A[t + 1], (1 - c.gamma * alpha) * A[t] + alpha * c.L / n * zc)
            rep.check("recursion_A", t, A[t + 1], (1 - c.gamma * alpha + k * s_imb) * A[t] + k * B[t] + k * s_imb * c.w_star_norm)

    if not smooth_ok:
        why = f"alpha={alpha} > 2/(L+beta)={c.alpha_max_smooth!r}"
        for fam in ("gd_contraction", "average_step_vs_z", "recursion_A", "iterated_recursions"):
            rep.skip(fam, why)
    else:
        Ahat, Bhat = iterate_recursions(c, A[0], B[0], record.iterations)
        for t in range(record.iterations + 1):
            rep.check("iterated_recursions", t, A[t], Ahat[t])
            rep.check("iterated_recursions", t, B[t], Bhat[t])
    return rep


@dataclass
class CertificateReport:
    certified: bool
    reason: str | None = None
    R: float = math.nan
    bR: float = math.nan
    t0: int = 0
    checked: int = 0
    margin_A: float = math.nan
    margin_B: float = math.nan
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.certified and not self.violations

    def to_kv(self) -> str:
        return "\n".join([
            f"certificate.certified={str(self.certified).lower()}",
            f"certificate.reason={self.reason or ''}",
            f"certificate.R={self.R!r}", f"certificate.bR={self.bR!r}", f"certificate.t0={self.t0}",
            f"certificate.checked={self.checked}", f"certificate.violations={len(self.violations)}",
            f"certificate.margin_A={self.margin_A!r}", f"certificate.margin_B={self.margin_B!r}",
        ])


def check_boundedness_certificate(record: engine.RunRecord, consts: TheoryConstants) -> CertificateReport:
    """Verify ``A_t <= R`` and ``B_t <= b R`` for every recorded ``t >= t0``."""
    verdict = stepsize_gate(consts)
    if not verdict:
        return CertificateReport(False, reason=f"stepsize gate failed: {verdict.reason}", t0=consts.t0)
    t0 = consts.t0
    if record.iterations < t0:
        return CertificateReport(False, reason=f"record horizon {record.iterations} is shorter than t0={t0}", t0=t0)
    R = theorem_radius(consts, record.A[t0], record.B[t0])
    bR = consts.b * R
    rep = CertificateReport(True, R=R, bR=bR, t0=t0)
    A, B = record.A[t0:], record.B[t0:]
    rep.checked = len(A)
    rep.margin_A = float(np.min(R - A))
    rep.margin_B = float(np.min(bR - B))
    for i in range(len(A)):
        if A[i] > R * (1 + MONITOR_RTOL):
            rep.violations.append(Violation("radius_A", t0 + i, A[i], R))
        if B[i] > bR * (1 + MONITOR_RTOL):
            rep.violations.append(Violation("radius_B", t0 + i, B[i], bR))
    return rep


def envelope_radius(record: engine.RunRecord, consts: TheoryConstants) -> float:
    """A bound on ``sup_t A_t``: the boundedness radius, extended over ``t < t0`` by the measured values."""
    R = theorem_radius(consts, record.A[consts.t0], record.B[consts.t0])
    return max(R, float(np.max(record.A[: consts.t0 + 1])))


def check_envelopes(record: engine.RunRecord, consts: TheoryConstants, R: float | None = None) -> MonitorReport:
    """Pointwise check of both convergence envelopes against the recorded ``A_t``, ``B_t``."""
    if R is None:
        R = envelope_radius(record, consts)
    c = consts.with_radius(R)
    rep = MonitorReport(notes=[E_C_SUBSTITUTION, f"R={R!r}"])
    t = np.arange(record.iterations + 1)
    envB = envelope_B(c, record.B[0], t)
    envA = envelope_A(c, record.A[0], record.B[0], t)
    for i in t:
        rep.check("envelope_B", int(i), record.B[i], envB[i])
        rep.check("envelope_A", int(i), record.A[i], envA[i])
    return rep
