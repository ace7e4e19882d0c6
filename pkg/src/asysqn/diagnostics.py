"""Closed-form convergence constants, evaluated in log space.

The inverse-Hessian upper bound ``mu2 = ((d+M) l)^(d+M-1) / mu^(d+M)``
overflows float64 already for modest ``d``, so every quantity below is carried
as a natural log and exponentiated only at the edges.  Nothing here feeds back
into the optimisers; these are reports and test oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse.linalg as spla

from .data import Dataset
from .model import LossKind, LossModel

DENSE_EIG_MAX_D = 2000


class StepSizeError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConstants:
    mu: float
    l: float
    d: int
    M: int
    m: int = 1
    tau: int = 0
    eta: float = 0.0

    def __post_init__(self):
        if not (0 < self.mu <= self.l):
            raise ValueError(f"need 0 < mu <= l, got mu={self.mu}, l={self.l}")
        if self.d < 1 or self.M < 1 or self.m < 1 or self.tau < 0 or self.eta < 0:
            raise ValueError("d, M, m must be >= 1; tau, eta >= 0")

    @property
    def kappa_b(self) -> float:
        return self.l / self.mu


def _safe_exp(v: float) -> float:
    return math.exp(v) if v < 709.0 else math.inf


def estimate_mu_l(model: LossModel, data: Dataset) -> tuple[float, float]:
    """Strong-convexity and smoothness constants of the full objective.

    Least squares: exact extreme eigenvalues of ``(2/n) Z^T Z + 2 lam I``
    (dense ``eigvalsh`` up to d=2000, Lanczos above).  Logistic: the standard
    bounds ``0.25 max|z|^2 + 2 lam`` and ``2 lam``.
    """
    if model.kind is LossKind.HINGE:
        raise ValueError("nonsmooth loss: mu and l are undefined for hinge")
    if model.kind is LossKind.LOGISTIC:
        l = 0.25 * float(data.row_sq_norms().max()) + 2.0 * model.lam
        return 2.0 * model.lam, l
    n, d = data.n, data.d
    reg = 2.0 * model.lam
    if d <= DENSE_EIG_MAX_D:
        z = data.dense_rows()
        ev = np.linalg.eigvalsh((2.0 / n) * (z.T @ z))
        return float(max(ev[0], 0.0)) + reg, float(ev[-1]) + reg
    z = data.rows
    op = spla.LinearOperator((d, d), matvec=lambda v: (2.0 / n) * (z.T @ (z @ v)),
                             dtype=np.float64)
    hi = spla.eigsh(op, k=1, which="LA", tol=1e-8, return_eigenvectors=False)[0]
    shifted = spla.LinearOperator((d, d), matvec=lambda v: hi * v - op.matvec(v),
                                  dtype=np.float64)
    top = spla.eigsh(shifted, k=1, which="LA", tol=1e-8, return_eigenvectors=False)[0]
    return float(max(hi - top, 0.0)) + reg, float(hi) + reg


@dataclass(frozen=True)
class Lemma2Bounds:
    log_mu1: float
    log_mu2: float
    log_kappa_h: float

    @property
    def mu1(self) -> float:
        return _safe_exp(self.log_mu1)

    @property
    def mu2(self) -> float:
        return _safe_exp(self.log_mu2)

    @property
    def kappa_h(self) -> float:
        return _safe_exp(self.log_kappa_h)

    def __iter__(self):
        return iter((self.log_mu1, self.log_mu2, self.log_kappa_h))


def lemma2_bounds(c: ProblemConstants) -> Lemma2Bounds:
    """Spectral bounds ``mu1 I <= H_k <= mu2 I`` for the L-BFGS matrices."""
    q = c.d + c.M
    log_ql = math.log(q) + math.log(c.l)
    log_mu1 = -log_ql
    log_mu2 = (q - 1) * log_ql - q * math.log(c.mu)
    log_kappa_h = log_mu2 - log_mu1
    closed = q * (math.log(q) + math.log(c.kappa_b))
    if abs(log_kappa_h - closed) > 1e-10 * max(1.0, abs(closed)):
        raise ArithmeticError("kappa(H) identity check failed")
    return Lemma2Bounds(log_mu1, log_mu2, log_kappa_h)


@dataclass(frozen=True)
class ThetaRate:
    C: float
    theta: float
    log_C: float
    contracts: bool  # 0 < theta < 1

    def __iter__(self):
        return iter((self.C, self.theta))


def _log_delay_term(c: ProblemConstants, log_mu2: float) -> float:
    # log(2 l^2 eta^2 mu2^2 tau^2)
    if c.tau == 0 or c.eta == 0:
        return -math.inf
    return math.log(2.0) + 2.0 * (math.log(c.l) + math.log(c.eta) + log_mu2 + math.log(c.tau))


def delay_bound(c: ProblemConstants, log_mu2: float | None = None) -> float:
    """Largest admissible step, ``1 / (sqrt(2) l mu2 tau)``."""
    if log_mu2 is None:
        log_mu2 = lemma2_bounds(c).log_mu2
    if c.tau == 0:
        return math.inf
    return _safe_exp(-(0.5 * math.log(2.0) + math.log(c.l) + log_mu2 + math.log(c.tau)))


def theta_rate(c: ProblemConstants, bounds: Lemma2Bounds | None = None) -> ThetaRate:
    """Per-epoch contraction factor of the asynchronous method.

    ``C = 4 m l^2 eta^2 mu2^2 (l eta mu1 tau + 1) / (1 - 2 l^2 eta^2 mu2^2 tau^2)``
    and ``theta = (1 + C) / (1 + m eta mu mu1 - C)``.  ``bounds`` overrides
    the worst-case ``mu1, mu2``.
    """
    b = bounds if bounds is not None else lemma2_bounds(c)
    if c.eta == 0:
        return ThetaRate(0.0, 1.0, -math.inf, False)
    log_a = _log_delay_term(c, b.log_mu2)
    if log_a >= 0.0:
        raise StepSizeError(
            f"step size {c.eta:g} violates delay bound eta < 1/(sqrt(2) l mu2 tau) "
            f"= {delay_bound(c, b.log_mu2):.6g}")
    log_eta = math.log(c.eta)
    log_one_minus_a = math.log(-math.expm1(log_a)) if log_a > -math.inf else 0.0
    log_inner = float(np.logaddexp(0.0, math.log(c.l) + log_eta + b.log_mu1 + math.log(c.tau))) \
        if c.tau else 0.0
    log_C = (math.log(4.0) + math.log(c.m) + 2.0 * (math.log(c.l) + log_eta + b.log_mu2)
             + log_inner - log_one_minus_a)
    C = _safe_exp(log_C)
    gain = _safe_exp(math.log(c.m) + log_eta + math.log(c.mu) + b.log_mu1)
    denom = 1.0 + gain - C
    theta = (1.0 + C) / denom if math.isfinite(C) and denom != 0 else math.nan
    return ThetaRate(C, theta, log_C, bool(0.0 < theta < 1.0))


@dataclass(frozen=True)
class CorollaryCheck:
    threshold: float
    threshold_ok: bool
    rate_bound: float
    limit: float  # rate_bound as m -> infinity

    def __iter__(self):
        return iter((self.threshold_ok, self.rate_bound))


def corollary_check(kappa_b: float, kappa_h: float, m: float) -> CorollaryCheck:
    """Epoch-length threshold ``m > 8 kB kH + 4 kB`` and the resulting rate.

    With ``eta = 1/(2 l mu2 m)`` and ``tau = L < m`` the contraction is at most
    ``((m+2) kB kH + kB) / ((m-2) kB kH - kB + m/2)``, which tends to
    ``kB kH / (kB kH + 1/2)`` for large ``m``.
    """
    if kappa_b <= 0 or kappa_h <= 0 or m <= 0:
        raise ValueError("condition numbers and m must be positive")
    kk = kappa_b * kappa_h
    threshold = 8.0 * kk + 4.0 * kappa_b
    if math.isinf(m):
        rate = kk / (kk + 0.5)
    else:
        rate = ((m + 2.0) * kk + kappa_b) / ((m - 2.0) * kk - kappa_b + m / 2.0)
    return CorollaryCheck(threshold, bool(m > threshold), rate, kk / (kk + 0.5))


@dataclass(frozen=True)
class StepSizeBounds:
    log_eta_root: float
    log_eta_delay: float
    log_eta_default: float

    @property
    def eta_quadratic_root(self) -> float:
        return _safe_exp(self.log_eta_root)

    @property
    def eta_delay_bound(self) -> float:
        return _safe_exp(self.log_eta_delay)

    @property
    def eta_default(self) -> float:
        return _safe_exp(self.log_eta_default)

    def __iter__(self):
        return iter((self.eta_quadratic_root, self.eta_delay_bound, self.eta_default))


def step_size_bounds(c: ProblemConstants, bounds: Lemma2Bounds | None = None) -> StepSizeBounds:
    """Admissible step sizes.

    The positive root of ``a eta^2 + b eta - c`` with ``a = 2 l^2 mu1 mu2^2
    tau (4l + mu tau)``, ``b = 8 l^2 mu2^2``, ``c = mu mu1``, the delay bound
    ``1/(sqrt 2 l mu2 tau)`` and the default ``1/(2 l mu2 m)``.  ``bounds``
    overrides the worst-case ``mu1, mu2``.
    """
    lb = bounds if bounds is not None else lemma2_bounds(c)
    ll, lmu = math.log(c.l), math.log(c.mu)
    log_b = math.log(8.0) + 2.0 * ll + 2.0 * lb.log_mu2
    log_c = lmu + lb.log_mu1
    if c.tau == 0:
        log_root = log_c - log_b
        log_delay = math.inf
    else:
        log_a = (math.log(2.0) + 2.0 * ll + lb.log_mu1 + 2.0 * lb.log_mu2
                 + math.log(c.tau) + math.log(4.0 * c.l + c.mu * c.tau))
        # root = 2c / (b + sqrt(b^2 + 4ac)), cancellation-free
        log_sqrt = 0.5 * np.logaddexp(2.0 * log_b, math.log(4.0) + log_a + log_c)
        log_root = math.log(2.0) + log_c - float(np.logaddexp(log_b, log_sqrt))
        log_delay = -(0.5 * math.log(2.0) + ll + lb.log_mu2 + math.log(c.tau))
    log_default = -(math.log(2.0) + ll + lb.log_mu2 + math.log(c.m))
    if not log_root < log_delay:
        raise ArithmeticError("quadratic root exceeds the delay bound")
    return StepSizeBounds(log_root, log_delay, log_default)


ALGORITHMS = ("asysqn", "sqnvr", "svrg", "asysvrg", "sgd")


def datapass_per_epoch(algo: str, b: int, b_h: int, L: int, P: int, n: int) -> Fraction:
    """Data passes per epoch, exact.

    VR first-order methods cost 2 (anchor gradient plus one sweep of inner
    samples); the quasi-Newton variants add ``b_h / (b L P)`` for the
    curvature pair.  Both forms presume one inner sweep, ``b L P = n``.
    """
    if min(b, b_h, L, P, n) < 1:
        raise ValueError("all inputs must be positive")
    if algo in ("svrg", "asysvrg"):
        return Fraction(2)
    if algo in ("asysqn", "sqnvr"):
        return 2 + Fraction(b_h, b * L * P)
    if algo == "sgd":
        return Fraction(b * L * P, n)
    raise ValueError(f"unknown algorithm {algo!r}")


def default_snapshot_period(n: int, b: int, L: int, P: int) -> int:
    """``m = n / (b L P)`` epochs between anchor refreshes, at least 1."""
    return max(1, n // (b * L * P))


def theory_report(model: LossModel, data: Dataset, M: int, m: int, tau: int,
                  eta: float | None = None) -> str:
    """Plain-text summary of every constant and bound for one problem."""
    if not model.smooth:
        raise ValueError("diagnostics unavailable for nonsmooth loss")
    mu, l = estimate_mu_l(model, data)
    lines = [f"n = {data.n}", f"d = {data.d}", f"model = {model.kind.value}",
             f"lambda = {model.lam:g}", f"mu = {mu:.10g}", f"l = {l:.10g}"]
    if mu <= 0:
        lines.append("kappa(B) = inf (objective not strongly convex)")
        return "\n".join(lines) + "\n"
    base = ProblemConstants(mu=mu, l=l, d=data.d, M=M, m=m, tau=tau, eta=eta or 0.0)
    b = lemma2_bounds(base)
    lines += [f"kappa(B) = {base.kappa_b:.10g}",
              f"log mu1 = {b.log_mu1:.10g}",
              f"log mu2 = {b.log_mu2:.10g}",
              f"log kappa(H) = {b.log_kappa_h:.10g}"]
    cor = corollary_check(base.kappa_b, b.kappa_h, m)
    lines += [f"m threshold = {cor.threshold:.10g}",
              f"m = {m} satisfies threshold: {'yes' if cor.threshold_ok else 'no'}",
              f"corollary rate bound = {cor.rate_bound:.10g}",
              f"corollary rate limit (m -> inf) = {cor.limit:.10g}"]
    sb = step_size_bounds(base)
    lines += [f"log eta quadratic root = {sb.log_eta_root:.10g}",
              f"log eta delay bound = {sb.log_eta_delay:.10g}",
              f"log eta default = {sb.log_eta_default:.10g}"]
    if eta is not None:
        lines.append(f"eta = {eta:g}")
        try:
            th = theta_rate(base)
        except StepSizeError as exc:
            lines.append(f"VIOLATION: {exc}")
        else:
            lines += [f"log C = {th.log_C:.10g}", f"theta = {th.theta:.17g}",
                      f"theta in (0,1): {'yes' if th.contracts else 'no'}"]
    return "\n".join(lines) + "\n"
