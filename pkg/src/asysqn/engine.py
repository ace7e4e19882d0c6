"""Optimiser drivers.

Every algorithm shares one epoch loop:

1. refresh the variance-reduction anchor on schedule,
2. let ``P`` workers run ``L`` read/compute/commit iterations each against a
   single locked parameter cell,
3. join all workers, then (quasi-Newton variants only) form the epoch iterate
   ``x_k``, the correction pair ``(s_k, y_k)`` on a fresh subsample ``T`` and
   push it into the limited-memory history,
4. record metrics.

Workers compute in compiled ``nogil`` kernels, so Python threads overlap
their arithmetic.  The deterministic simulator in :mod:`asysqn.simsched`
swaps step 2 for a scripted interleaving and reuses everything else.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import threading
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse.linalg as spla

from . import _kernels
from .data import Dataset
from .diagnostics import default_snapshot_period, estimate_mu_l
from .lbfgs import CorrectionHistory, PushResult
from .model import (LossKind, LossModel, full_gradient, full_loss, hessian_vector_product,
                    sample_gradient)
from .vr import VrAnchor, schedule_update

log = logging.getLogger(__name__)

ALGOS = ("asysqn", "sqnvr", "svrg", "asysvrg", "sgd")
QUASI_NEWTON = ("asysqn", "sqnvr")
SEQUENTIAL = ("sqnvr", "svrg")


class DivergenceError(RuntimeError):
    pass


@dataclass
class RunConfig:
    eta: float
    b: int = 10
    b_h: int | None = None  # defaults to 10 * b
    M: int = 10
    L: int = 50
    P: int = 1
    epochs: int = 50
    snapshot_period: int | None = None  # defaults to n // (b L P), at least 1
    y_option: str | None = None  # "I" | "II"; defaults by loss
    x_k_mode: str = "average"  # "average" | "latest"
    warm_start_epochs: int = 2
    seed: int = 0
    target_gap: float | None = None  # None or inf disables early stopping
    max_datapasses: float | None = None
    init: str = "zeros"  # "zeros" | "random"
    decay: float = 0.0  # eta_k = eta / (1 + decay k)

    def validate(self) -> None:
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise ValueError("eta must be a finite nonnegative number")
        for name in ("b", "M", "L", "P"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.b_h is not None and self.b_h < 1:
            raise ValueError("b_h must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.snapshot_period is not None and self.snapshot_period < 1:
            raise ValueError("snapshot period m must be >= 1")
        if self.warm_start_epochs < 2:
            raise ValueError("warm_start_epochs must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.y_option not in (None, "I", "II"):
            raise ValueError("y_option must be 'I' or 'II'")
        if self.x_k_mode not in ("average", "latest"):
            raise ValueError("x_k_mode must be 'average' or 'latest'")
        if self.init not in ("zeros", "random"):
            raise ValueError("init must be 'zeros' or 'random'")
        if self.decay < 0:
            raise ValueError("decay must be >= 0")

    def resolved(self, n: int, model: LossModel, P: int | None = None) -> "RunConfig":
        """Copy with every derived default filled in."""
        self.validate()
        P = self.P if P is None else P
        return dataclasses.replace(
            self,
            P=P,
            b_h=self.b_h if self.b_h is not None else 10 * self.b,
            snapshot_period=self.snapshot_period or default_snapshot_period(n, self.b, self.L, P),
            y_option=self.y_option or ("I" if model.kind is LossKind.HINGE else "II"),
        )


class SharedState:
    """The shared parameter cell and its global write counter ``t``.

    ``read`` and ``commit`` take the same lock, so a read always sees a
    whole vector.  ``nu = t_commit - t_read`` is the delay of a write;
    the staleness reported in traces is ``nu - 1``, the number of foreign
    commits that landed between a worker's read and its write.
    """

    def __init__(self, x, log_writes: bool = False):
        self.x = np.array(x, dtype=np.float64)
        self.t = 0
        self._lock = threading.Lock()
        self.write_log: list[tuple[int, int, int]] | None = [] if log_writes else None
        self.begin_epoch()

    def begin_epoch(self) -> None:
        self.iterate_sum = np.zeros_like(self.x)
        self.commits = 0
        self.max_nu = 0

    def read(self, out: np.ndarray) -> int:
        with self._lock:
            np.copyto(out, self.x)
            return self.t

    def commit(self, direction: np.ndarray, eta: float, version: int, writer: int) -> int:
        with self._lock:
            self.x += eta * direction
            self._record(version, writer)
            return self.t - version

    def _record(self, version: int, writer: int) -> None:
        self.t += 1
        self.iterate_sum += self.x
        self.commits += 1
        nu = self.t - version
        if nu > self.max_nu:
            self.max_nu = nu
        if self.write_log is not None:
            self.write_log.append((self.t, writer, version))

    @property
    def max_staleness(self) -> int:
        return max(self.max_nu - 1, 0)

    def iterate_mean(self) -> np.ndarray:
        return self.iterate_sum / self.commits


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    datapasses: Fraction
    wall_ms: float
    objective: float
    gap: float
    grad_norm: float
    max_staleness: int


@dataclass
class RunTrace:
    algo: str
    threads: int
    f_star: float
    records: list[EpochRecord] = field(default_factory=list)
    x: np.ndarray | None = None
    eta: float | None = None
    write_log: list[tuple[int, int, int]] | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.records])

    def reached(self, target: float) -> bool:
        return bool(self.records) and self.final.gap <= target


@dataclass(frozen=True)
class FinalizeResult:
    x_k: np.ndarray
    s: np.ndarray
    y: np.ndarray | None
    result: PushResult


def epoch_finalize(prev_xk, iterates, shared_x, mode: str, model: LossModel, data: Dataset,
                   T, y_option: str, history: CorrectionHistory) -> FinalizeResult:
    """Form ``x_k``, the correction pair on subsample ``T``, and push it.

    ``iterates`` is either the sequence of post-commit iterates of the epoch or
    their precomputed mean (a single vector); only ``average`` mode reads it.
    """
    if mode == "average":
        it = np.asarray(iterates, dtype=np.float64)
        x_k = it if it.ndim == 1 else it.mean(axis=0)
    elif mode == "latest":
        x_k = np.array(shared_x, dtype=np.float64)
    else:
        raise ValueError(f"unknown x_k mode {mode!r}")
    s = x_k - prev_xk
    if not np.any(s):
        log.info("zero step: correction pair skipped")
        return FinalizeResult(x_k, s, None, PushResult.SKIPPED)
    if y_option == "I":
        y = sample_gradient(model, data, T, x_k) - sample_gradient(model, data, T, prev_xk)
    elif y_option == "II":
        y = hessian_vector_product(model, data, T, x_k, s)
    else:
        raise ValueError(f"unknown y option {y_option!r}")
    if not (np.all(np.isfinite(x_k)) and np.all(np.isfinite(y))):
        raise DivergenceError("non-finite correction pair: reduce eta")
    return FinalizeResult(x_k, s, y, history.push(s, y))


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def worker_samples(seed: int, epoch: int, P: int, L: int, b: int, n: int) -> np.ndarray:
    """``(P, L, b)`` minibatch indices, uniform with replacement.

    Worker ``p`` in epoch ``k`` draws from its own stream keyed ``(k, p + 1)``
    so its samples do not depend on how threads interleave.
    """
    out = np.empty((P, L, b), dtype=np.int64)
    for p in range(P):
        out[p] = _stream(seed, epoch, p + 1).integers(0, n, size=(L, b))
    return out


DirectionFn = Callable[[np.ndarray, np.ndarray, np.ndarray], None]


def make_direction(model: LossModel, data: Dataset, anchor: VrAnchor | None,
                   history: CorrectionHistory | None) -> DirectionFn:
    """Bind the per-iteration kernel: ``fn(idx, x_read, out)`` writes ``-H v`` to ``out``."""
    d = data.d
    kind, lam, labels = model.kind.code, float(model.lam), data.labels
    if anchor is None:
        w = mu = np.zeros(d)
        use_vr = False
    else:
        w, mu, use_vr = anchor.w, anchor.mu, True
    if history is not None and len(history):
        S, Y, rho = history.packed()
        npairs = len(history)
    else:
        S = Y = np.zeros((1, d))
        rho = np.zeros(1)
        npairs = 0
    if data.is_sparse:
        indptr = data.rows.indptr.astype(np.int64)
        indices = data.rows.indices.astype(np.int64)
        values = data.rows.data
        kernel = _kernels.direction_csr

        def direction(idx, x_read, out):
            kernel(kind, lam, indptr, indices, values, labels, idx, x_read, w, mu, use_vr,
                   S, Y, rho, npairs, out)
    else:
        Z = data.rows
        kernel = _kernels.direction_dense

        def direction(idx, x_read, out):
            kernel(kind, lam, Z, labels, idx, x_read, w, mu, use_vr, S, Y, rho, npairs, out)
    return direction


EpochExecutor = Callable[[SharedState, DirectionFn, float, np.ndarray], None]


def threaded_epoch(state: SharedState, direction: DirectionFn, eta: float,
                   samples: np.ndarray) -> None:
    """Run ``P`` workers of ``L`` iterations each and join them."""
    P, L = samples.shape[:2]
    d = state.x.shape[0]
    errors: list[BaseException] = []

    def work(p: int) -> None:
        x_read = np.empty(d)
        out = np.empty(d)
        try:
            for i in range(L):
                version = state.read(x_read)
                direction(samples[p, i], x_read, out)
                state.commit(out, eta, version, p)
        except BaseException as exc:  # re-raised on the coordinator
            errors.append(exc)

    if P == 1:
        work(0)
    else:
        threads = [threading.Thread(target=work, args=(p,), name=f"worker-{p}") for p in range(P)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    if errors:
        raise errors[0]


def _initial_x(cfg: RunConfig, d: int, x0) -> np.ndarray:
    if x0 is not None:
        x = np.array(x0, dtype=np.float64).ravel()
        if x.shape != (d,):
            raise ValueError(f"x0 has shape {x.shape}, expected ({d},)")
        return x
    if cfg.init == "random":
        return _stream(cfg.seed, 2**32).standard_normal(d)
    return np.zeros(d)


def run(algo: str, config: RunConfig, model: LossModel, data: Dataset,
        f_star: float | None = None, x0=None,
        executor: EpochExecutor = threaded_epoch, log_writes: bool = False) -> RunTrace:
    """Shared driver behind every ``run_*`` entry point."""
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}")
    n, d = data.n, data.d
    cfg = config.resolved(n, model, P=1 if algo in SEQUENTIAL else config.P)
    if cfg.P > (os.cpu_count() or 1):
        warnings.warn(f"P={cfg.P} exceeds the {os.cpu_count()} available hardware threads",
                      RuntimeWarning, stacklevel=2)
    if f_star is None:
        f_star = compute_reference_optimum(model, data)[0]
    quasi_newton = algo in QUASI_NEWTON
    use_vr = algo != "sgd"

    state = SharedState(_initial_x(cfg, d, x0), log_writes=log_writes)
    history = CorrectionHistory(cfg.M, d)
    anchor: VrAnchor | None = None
    prev_xk = state.x.copy()
    # load or compile the kernel before any timing starts
    make_direction(model, data, None, None)(np.zeros(1, dtype=np.int64), state.x.copy(),
                                            np.empty(d))
    visits = 0
    wall = 0.0
    trace = RunTrace(algo, cfg.P, float(f_star), eta=cfg.eta)

    for k in range(cfg.epochs):
        t0 = time.perf_counter()
        eta_k = cfg.eta / (1.0 + cfg.decay * k)
        if use_vr:
            fresh = schedule_update(state.x, k, cfg.snapshot_period, anchor, model, data)
            if fresh is not anchor:
                visits += n
            anchor = fresh
        qn_active = quasi_newton and k >= cfg.warm_start_epochs
        direction = make_direction(model, data, anchor, history if qn_active else None)
        samples = worker_samples(cfg.seed, k, cfg.P, cfg.L, cfg.b, n)
        state.begin_epoch()
        with np.errstate(over="ignore", invalid="ignore"):
            executor(state, direction, eta_k, samples)
        visits += state.commits * cfg.b
        if not np.all(np.isfinite(state.x)):
            raise DivergenceError(f"diverged in epoch {k}: reduce eta")
        if quasi_newton:
            T = _stream(cfg.seed, k, 0).integers(0, n, size=cfg.b_h)
            with np.errstate(over="ignore", invalid="ignore"):
                fin = epoch_finalize(prev_xk, state.iterate_mean(), state.x, cfg.x_k_mode,
                                     model, data, T, cfg.y_option, history)
            visits += cfg.b_h
            prev_xk = fin.x_k
        wall += time.perf_counter() - t0

        with np.errstate(over="ignore", invalid="ignore"):
            f = full_loss(model, data, state.x)
            gnorm = float(np.linalg.norm(full_gradient(model, data, state.x)))
        if not math.isfinite(f):
            raise DivergenceError(f"diverged in epoch {k}: reduce eta")
        rec = EpochRecord(k, Fraction(visits, n), wall * 1e3, f, f - f_star, gnorm,
                          state.max_staleness)
        trace.records.append(rec)
        if cfg.target_gap is not None and rec.gap <= cfg.target_gap < math.inf:
            break
        if cfg.max_datapasses is not None and rec.datapasses >= cfg.max_datapasses:
            break
    trace.x = state.x.copy()
    trace.write_log = state.write_log
    return trace


def run_asysqn(config: RunConfig, model: LossModel, data: Dataset, **kw) -> RunTrace:
    return run("asysqn", config, model, data, **kw)


def run_sqnvr(config: RunConfig, model: LossModel, data: Dataset, **kw) -> RunTrace:
    return run("sqnvr", config, model, data, **kw)


def run_svrg(config: RunConfig, model: LossModel, data: Dataset, **kw) -> RunTrace:
    return run("svrg", config, model, data, **kw)


def run_asysvrg(config: RunConfig, model: LossModel, data: Dataset, **kw) -> RunTrace:
    return run("asysvrg", config, model, data, **kw)


def run_sgd(config: RunConfig, model: LossModel, data: Dataset, **kw) -> RunTrace:
    return run("sgd", config, model, data, **kw)


def compute_reference_optimum(model: LossModel, data: Dataset,
                              hinge_epochs: int = 10_000) -> tuple[float, np.ndarray]:
    """High-accuracy ``(f*, x*)`` used to measure optimality gaps.

    Least squares solves the normal equations directly (d <= 2000) or by CG.
    Logistic runs full-batch L-BFGS and polishes with Newton-CG until the
    gradient norm is 1e-12.  Hinge has no smooth solver; a long SVRG run
    with a decaying step stands in and its final subgradient norm is logged.
    """
    n, d = data.n, data.d
    if model.kind is LossKind.LEAST_SQUARES:
        z, y = data.rows, data.labels
        rhs = (2.0 / n) * np.asarray(z.T @ y).ravel()
        if d <= 2000:
            zd = data.dense_rows()
            A = (2.0 / n) * (zd.T @ zd) + 2.0 * model.lam * np.eye(d)
            try:
                x = np.linalg.solve(A, rhs)
                if not np.all(np.isfinite(x)):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                # singular: minimum-norm solution via a tiny ridge
                x = np.linalg.solve(A + 1e-12 * np.eye(d), rhs)
            x = x + np.linalg.lstsq(A, rhs - A @ x, rcond=None)[0]
        else:
            op = spla.LinearOperator(
                (d, d), dtype=np.float64,
                matvec=lambda v: (2.0 / n) * np.asarray(z.T @ (z @ v)).ravel() + 2 * model.lam * v)
            x, info = spla.cg(op, rhs, rtol=1e-14, maxiter=10 * d)
            if info != 0:
                log.warning("CG stopped before reaching 1e-14 (info=%d)", info)
        return full_loss(model, data, x), x

    if model.kind is LossKind.LOGISTIC:
        res = scipy.optimize.minimize(
            lambda v: full_loss(model, data, v), np.zeros(d),
            jac=lambda v: full_gradient(model, data, v), method="L-BFGS-B",
            options={"maxiter": 20_000, "gtol": 1e-12, "ftol": 0.0, "maxcor": 20})
        x = res.x
        for _ in range(50):
            g = full_gradient(model, data, x)
            if np.linalg.norm(g) <= 1e-12:
                break
            op = spla.LinearOperator(
                (d, d), dtype=np.float64,
                matvec=lambda v, x=x: hessian_vector_product(model, data, None, x, v))
            step, _ = spla.cg(op, -g, rtol=1e-12, maxiter=10 * d)
            x = x + step
        return full_loss(model, data, x), x

    # hinge
    l_hat = float(data.row_sq_norms().max()) + 2.0 * model.lam
    cfg = RunConfig(eta=0.5 / l_hat, b=10, L=max(1, n // 10), P=1, epochs=hinge_epochs,
                    decay=1.0, snapshot_period=1)
    trace = run("svrg", cfg, model, data, f_star=0.0)
    x = trace.x
    log.info("hinge reference: subgradient norm %.3e after %d epochs",
             trace.final.grad_norm, len(trace))
    return full_loss(model, data, x), x


def lipschitz_estimate(model: LossModel, data: Dataset) -> float:
    """Scale ``l_hat`` for the step-size grid."""
    if model.smooth:
        return estimate_mu_l(model, data)[1]
    return float(data.row_sq_norms().max()) + 2.0 * model.lam


def eta_grid(l_hat: float, lo: int = -10, hi: int = 0) -> list[float]:
    return [2.0 ** e / l_hat for e in range(lo, hi + 1)]


def grid_search_eta(algo: str, config: RunConfig, model: LossModel, data: Dataset,
                    f_star: float, grid: Sequence[float] | None = None,
                    **kw) -> tuple[float, RunTrace]:
    """Best constant step on ``grid``; diverging steps are dropped.

    Steps are ranked by final gap, floored at ``64 eps max(1, |f*|)`` where
    rounding noise takes over; among steps reaching the same gap, the one
    that got there in fewer data passes wins.
    """
    if grid is None:
        grid = eta_grid(lipschitz_estimate(model, data))
    floor = 64 * np.finfo(float).eps * max(1.0, abs(f_star))
    best = None
    for eta in grid:
        try:
            trace = run(algo, dataclasses.replace(config, eta=eta), model, data,
                        f_star=f_star, **kw)
        except DivergenceError:
            continue
        if not trace.records:
            continue
        final = max(trace.final.gap, floor)
        first = next(r.datapasses for r in trace.records if r.gap <= final)
        key = (final, first)
        if best is None or key < best[0]:
            best = (key, eta, trace)
    if best is None:
        raise DivergenceError("every step size on the grid diverged")
    return best[1], best[2]
