"""Monte Carlo validation of the steady-state predictions.

Every repetition owns a counter-based generator (Philox) keyed by
``(base_seed, delta_index, rep_index)``.  Repetitions are simulated in
fixed-size chunks whose boundaries do not depend on the worker count, and
results are concatenated in repetition order, so estimates are bit-for-bit
reproducible for any number of workers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import softmax

from .analysis import wrong_hypotheses
from .engine import Strategy, StrategyKind, decide, log_ratios, run_final_batch, streams
from .errors import InsufficientDataError, PlanValidationError

CHUNK = 250


@dataclass(frozen=True)
class StationaryExperiment:
    """Network, model and truth of a stationary experiment."""

    model: object
    a: np.ndarray
    theta0: int = 0
    kind: StrategyKind = StrategyKind.ASL

    def strategy(self, delta):
        kind = StrategyKind(self.kind)
        if kind is StrategyKind.TRADITIONAL:
            return Strategy.traditional()
        return Strategy(kind, delta)


@dataclass(frozen=True)
class MCPlan:
    deltas: tuple
    reps: int
    horizon_factor: float = 10.0
    base_seed: int = 0
    thin: int = 1

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in np.atleast_1d(self.deltas)))
        if self.reps < 1:
            raise PlanValidationError("repetitions must be at least 1")
        if self.horizon_factor < 1:
            raise PlanValidationError(
                f"horizon {self.horizon_factor}/delta is below 1/delta; steady state not reached")
        if not self.deltas or any(not 0 < d <= 1 for d in self.deltas):
            raise PlanValidationError("step sizes must lie in (0, 1]")
        if self.thin < 1:
            raise PlanValidationError("thinning stride must be at least 1")

    def horizon(self, delta):
        return math.ceil(self.horizon_factor / delta - 1e-9)


def rep_generator(base_seed, delta_index, rep_index):
    ss = np.random.SeedSequence(base_seed, spawn_key=(delta_index, rep_index))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class MCEstimate:
    """Per-agent statistics of the final-step log-belief ratios."""

    delta: float
    horizon: int
    reps: int
    theta0: int
    wrong: tuple
    p_hat: np.ndarray
    stderr: np.ndarray
    theta_error: np.ndarray
    mean_lambda: np.ndarray
    cov_lambda: np.ndarray
    lambdas: np.ndarray = field(repr=False, default=None)

    @property
    def events(self):
        return np.rint(self.p_hat * self.reps).astype(int)


def _chunk_task(args):
    model, a, strategy, theta0, horizon, base, di, lo, hi = args
    rngs = [rep_generator(base, di, r) for r in range(lo, hi)]
    return run_final_batch(model, a, strategy, horizon, theta0, rngs)


def _final_log_beliefs(exp, delta, di, plan, workers):
    horizon = plan.horizon(delta)
    strategy = exp.strategy(delta)
    tasks = [(exp.model, exp.a, strategy, exp.theta0, horizon, plan.base_seed, di,
              lo, min(lo + CHUNK, plan.reps)) for lo in range(0, plan.reps, CHUNK)]
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_task, tasks))
    else:
        parts = [_chunk_task(t) for t in tasks]
    return np.concatenate(parts), horizon


def summarize(logb, delta, horizon, theta0):
    """Aggregate final log-beliefs ``(R, N, H)`` into an :class:`MCEstimate`."""
    reps, _, h = logb.shape
    wrong = wrong_hypotheses(h, theta0)
    err = decide(softmax(logb, axis=-1)) != theta0
    p = err.mean(axis=0)
    lam = log_ratios(logb, theta0)[..., wrong]
    mean = lam.mean(axis=0)
    centered = lam - mean
    cov = np.einsum("rki,rkj->kij", centered, centered) / max(reps - 1, 1)
    return MCEstimate(delta, horizon, reps, theta0, tuple(wrong), p,
                      np.sqrt(p * (1 - p) / reps), (lam <= 0).mean(axis=0), mean, cov, lam)


def run_plan(exp, plan, workers=1):
    """Simulate every step size of ``plan``; returns one estimate per step size."""
    out = []
    for di, delta in enumerate(plan.deltas):
        logb, horizon = _final_log_beliefs(exp, delta, di, plan, workers)
        out.append(summarize(logb, delta, horizon, exp.theta0))
    return out


def estimate_error_probability(exp, plan, workers=1):
    return run_plan(exp, plan, workers)


@dataclass
class MomentComparison:
    delta: float
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    z_mean: np.ndarray
    cov_rel_error: np.ndarray


def empirical_steady_state_moments(exp, plan, m_ave, C_ave, workers=1):
    """Empirical mean/covariance of final ratios against ``(m_ave, delta C_ave/2)``.

    ``z_mean`` holds standardized residuals of the means and
    ``cov_rel_error`` the per-agent relative Frobenius error of
    ``cov * 2/delta`` with respect to ``C_ave``.
    """
    out = []
    C_ave = np.asarray(C_ave)
    for est in run_plan(exp, plan, workers):
        se = np.sqrt(np.diagonal(est.cov_lambda, axis1=1, axis2=2) / est.reps)
        z = (est.mean_lambda - np.asarray(m_ave)) / se
        rel = np.linalg.norm(est.cov_lambda * 2 / est.delta - C_ave, axis=(1, 2)) \
            / np.linalg.norm(C_ave)
        out.append(MomentComparison(est.delta, est.mean_lambda, est.cov_lambda, se, z, rel))
    return out


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    used: np.ndarray


def exponent_slope(deltas, p_hat, reps, min_events=20):
    """Least-squares slope of ``log p_hat`` against ``1/delta``.

    Only points with at least ``min_events`` observed errors take part.
    """
    deltas = np.asarray(deltas, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    reps = np.broadcast_to(np.asarray(reps, dtype=float), p_hat.shape)
    used = p_hat * reps >= min_events - 1e-9
    if used.sum() < 3:
        raise InsufficientDataError(
            f"only {int(used.sum())} grid points have >= {min_events} error events; need 3")
    x = 1.0 / deltas[used]
    y = np.log(p_hat[used])
    fit = stats.linregress(x, y)
    return SlopeFit(float(fit.slope), float(fit.stderr), float(fit.intercept), used)


def reversed_sums(x, a, k, delta):
    """Forward (adaptive) and reversed-order partial sums for agent ``k``.

    ``x`` has shape ``(T, N)`` and holds the data ``x_{l,i}`` for one wrong
    hypothesis.  With ``w_m = [A^{m+1}]_{:,k}``,

        forward[i-1]  = sum_{m<i} delta (1-delta)^m  w_m . x_{i-m}
        reversed[i-1] = sum_{m<i} delta (1-delta)^m  w_m . x_{m+1}
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    T = x.shape[0]
    fwd = np.empty(T)
    rev = np.empty(T)
    lam = np.zeros(x.shape[1])
    w = a[:, k].copy()
    acc = 0.0
    g = delta
    for i in range(T):
        lam = a.T @ ((1 - delta) * lam + delta * x[i])
        fwd[i] = lam[k]
        acc += g * (w @ x[i])
        rev[i] = acc
        g *= 1 - delta
        w = a @ w
    return fwd, rev


def reversed_sum_comparison(exp, delta, horizon, seed, agent=0, theta=None):
    """Run :func:`reversed_sums` on data drawn from the experiment's model."""
    model = exp.model
    if theta is None:
        theta = wrong_hypotheses(model.n_hypotheses, exp.theta0)[0]
    rng = streams(seed)[0]
    xi = model.sample_network(exp.theta0, rng, steps=horizon)
    x = model.llr(xi, exp.theta0)[..., theta]
    return reversed_sums(x, exp.a, agent, delta)


RESULT_COLUMNS = ("delta", "agent", "p_hat", "stderr", "reps", "horizon")
MOMENT_COLUMNS = ("delta", "agent", "theta", "mean_lambda", "theta_prime", "cov_lambda")


def write_results_csv(fh, estimates):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for est in estimates:
        for k, (p, se) in enumerate(zip(est.p_hat, est.stderr)):
            w.writerow((repr(est.delta), k + 1, repr(float(p)), repr(float(se)),
                        est.reps, est.horizon))


def write_moments_csv(fh, estimates):
    """One row per (delta, agent, theta, theta'); the mean repeats along theta'."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(MOMENT_COLUMNS)
    for est in estimates:
        for k in range(est.mean_lambda.shape[0]):
            for i, th in enumerate(est.wrong):
                for j, thp in enumerate(est.wrong):
                    w.writerow((repr(est.delta), k + 1, th + 1,
                                repr(float(est.mean_lambda[k, i])), thp + 1,
                                repr(float(est.cov_lambda[k, i, j]))))

