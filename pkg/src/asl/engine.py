"""Belief recursions: traditional social learning, ASL and flattened ASL.

All arithmetic is carried out on log-beliefs with the per-agent maximum
pinned to zero; probabilities are only materialized on request.  For agent
``k`` one step reads

    log psi_k  = w_mem * log mu_k + w_data * log L_k(xi_k | .)      (adapt)
    log mu_k'  = sum_l a[l, k] * log psi_l                           (combine)

followed by normalization, with ``(w_mem, w_data)`` equal to ``(1, 1)``
for traditional learning, ``(1 - delta, delta)`` for ASL and
``(1 - delta, 1)`` for the flattened variant.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .errors import ParameterError, SupportViolationError, ValidationError


class StrategyKind(enum.Enum):
    TRADITIONAL = "traditional"
    ASL = "asl"
    FLATTENED = "flattened"


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    delta: float | None = None

    def __post_init__(self):
        kind = StrategyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is StrategyKind.TRADITIONAL:
            if self.delta is not None:
                raise ParameterError("traditional learning takes no step size")
        else:
            if self.delta is None or not 0 < float(self.delta) <= 1:
                raise ParameterError(f"step size must lie in (0, 1], got {self.delta}")
            object.__setattr__(self, "delta", float(self.delta))

    @classmethod
    def traditional(cls):
        return cls(StrategyKind.TRADITIONAL)

    @classmethod
    def asl(cls, delta):
        return cls(StrategyKind.ASL, delta)

    @classmethod
    def flattened(cls, delta):
        return cls(StrategyKind.FLATTENED, delta)

    @property
    def weights(self):
        """``(w_mem, w_data)`` exponents of the adaptation step."""
        if self.kind is StrategyKind.TRADITIONAL:
            return 1.0, 1.0
        if self.kind is StrategyKind.ASL:
            return 1.0 - self.delta, self.delta
        return 1.0 - self.delta, 1.0

    def label(self):
        if self.kind is StrategyKind.TRADITIONAL:
            return "traditional"
        return f"{self.kind.value}(delta={self.delta:g})"


# log-domain primitives -----------------------------------------------------

def pin(logb):
    """Shift each row so its maximum is zero."""
    return logb - logb.max(axis=-1, keepdims=True)


def adapt_log(logmu, loglik, w_mem, w_data):
    if not np.all(np.isfinite(loglik)):
        raise SupportViolationError("likelihood vanishes at the observation")
    return pin(w_mem * logmu + w_data * loglik)


def combine_log(logpsi, a):
    """Geometric-average combination; works on ``(N, H)`` or ``(R, N, H)``."""
    return pin(np.matmul(a.T, logpsi))


def _to_log(p, name):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise SupportViolationError(f"{name} must be strictly positive")
    return np.log(p)


def _normalize(logp):
    return softmax(logp, axis=-1)


# probability-domain wrappers ----------------------------------------------

def adaptive_update(mu_prev, lik, delta):
    """ASL adaptation ``psi ∝ mu_prev^(1-delta) * lik^delta``."""
    if not 0 <= delta <= 1:
        raise ParameterError("delta must lie in [0, 1]")
    return _normalize(adapt_log(_to_log(mu_prev, "prior"), _to_log(lik, "likelihood"),
                                1.0 - delta, delta))


def bayesian_update(mu_prev, lik):
    return _normalize(adapt_log(_to_log(mu_prev, "prior"), _to_log(lik, "likelihood"), 1.0, 1.0))


def flattened_update(mu_prev, lik, delta):
    """Flatten the prior to ``mu^(1-delta)`` then apply Bayes' rule."""
    if not 0 <= delta <= 1:
        raise ParameterError("delta must lie in [0, 1]")
    return _normalize(adapt_log(_to_log(mu_prev, "prior"), _to_log(lik, "likelihood"),
                                1.0 - delta, 1.0))


def combine(psi, a):
    return _normalize(combine_log(_to_log(psi, "intermediate belief"), np.asarray(a, float)))


# state ----------------------------------------------------------------------

@dataclass(frozen=True)
class BeliefState:
    """Log-beliefs of all agents (rows pinned to max zero) and the step index."""

    log_beliefs: np.ndarray
    step: int = 0

    def __post_init__(self):
        lb = np.asarray(self.log_beliefs, dtype=float)
        if lb.ndim != 2 or lb.shape[1] < 2:
            raise ValidationError("log-beliefs must have shape (agents, hypotheses >= 2)")
        if not np.all(np.isfinite(lb)):
            raise ValidationError("log-beliefs must be finite (beliefs strictly positive)")
        object.__setattr__(self, "log_beliefs", lb)

    @classmethod
    def uniform(cls, n_agents, n_hypotheses):
        return cls(np.zeros((n_agents, n_hypotheses)))

    @classmethod
    def from_beliefs(cls, mu):
        return cls(pin(_to_log(mu, "belief")))

    @property
    def beliefs(self):
        return _normalize(self.log_beliefs)

    def log_ratios(self, reference):
        """``lambda_k(theta) = log mu_k(reference) - log mu_k(theta)``."""
        return log_ratios(self.log_beliefs, reference)

    def decisions(self):
        return decide(self.beliefs)


def log_ratios(logb, reference):
    return logb[..., reference:reference + 1] - logb


def decide(belief_row):
    """Index of the largest belief; ties go to the lowest index.

    Works along the last axis.  Callers pass materialized probabilities so
    that decisions agree exactly with recorded beliefs at rounding-level ties.
    """
    return np.argmax(np.asarray(belief_row), axis=-1)


def step(state, strategy, model, xi, a):
    """One adapt-then-combine step driven by observations ``xi`` (one per agent)."""
    w_mem, w_data = strategy.weights
    logpsi = adapt_log(state.log_beliefs, model.log_likelihoods(xi), w_mem, w_data)
    return BeliefState(combine_log(logpsi, a), state.step + 1)


def log_ratio_recursion_step(lam, x, strategy, a):
    """Affine recursion ``lam' = A^T (w_mem * lam + w_data * x)``.

    ``strategy`` may also be a bare float, read as the ASL step size.
    """
    if not isinstance(strategy, Strategy):
        strategy = Strategy.asl(strategy)
    w_mem, w_data = strategy.weights
    return np.matmul(np.asarray(a).T, w_mem * lam + w_data * x)


# trajectories -------------------------------------------------------------

FUNCTIONING_NAMES = ("nominal", "perturbed", "bad")
TRAJECTORY_COLUMNS = ("step", "agent", "hypothesis", "belief", "decision",
                      "regime_hypothesis", "regime_matrix", "regime_functioning")


def streams(seed):
    """Independent generators for observations, regimes and perturbation noise."""
    ss = np.random.SeedSequence(seed)
    return tuple(np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3))


@dataclass
class TrajectoryRecord:
    """Output of a single run.

    ``beliefs[j]`` holds the beliefs after step ``steps[j]``; ``decisions``
    and ``regimes`` are stored for every step ``1..horizon``.  ``regimes``
    columns are (true hypothesis, matrix index, functioning state).
    """

    steps: np.ndarray
    beliefs: np.ndarray
    decisions: np.ndarray
    regimes: np.ndarray
    final: BeliefState
    seed: int | None = None
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return len(self.decisions)

    def rows(self):
        for j, i in enumerate(self.steps):
            hyp, mat, fun = self.regimes[i - 1]
            for k in range(self.beliefs.shape[1]):
                for th in range(self.beliefs.shape[2]):
                    yield (int(i), k + 1, th + 1, repr(float(self.beliefs[j, k, th])),
                           int(self.decisions[i - 1, k]) + 1, int(hyp) + 1, int(mat) + 1,
                           FUNCTIONING_NAMES[int(fun)])

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        w.writerows(self.rows())


def _schedule(theta0, horizon):
    sched = np.broadcast_to(np.asarray(theta0, dtype=int), (horizon,)) \
        if np.ndim(theta0) == 0 else np.asarray(theta0, dtype=int)
    if sched.shape != (horizon,):
        raise ValidationError("hypothesis schedule must have one entry per step")
    return sched


def run_trajectory(model, a, strategy, horizon, theta0, seed=None, initial=None,
                   record_every=1, rng=None):
    """Simulate one stationary (or scripted) run.

    Parameters
    ----------
    theta0 : int or array of int
        True hypothesis, either fixed or one entry per step.
    seed : int, optional
        Base seed; observations use the first stream of :func:`streams`.
    rng : numpy.random.Generator, optional
        Overrides ``seed`` for the observation stream.
    """
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    sched = _schedule(theta0, horizon)
    if rng is None:
        rng = streams(seed)[0]
    a = np.asarray(a, dtype=float)
    state = initial if initial is not None else BeliefState.uniform(model.n_agents, model.n_hypotheses)
    rec_steps, rec_b = [], []
    dec = np.empty((horizon, model.n_agents), dtype=np.int64)
    for i in range(horizon):
        xi = model.sample_network(int(sched[i]), rng)
        state = step(state, strategy, model, xi, a)
        dec[i] = state.decisions()
        if (i + 1) % record_every == 0 or i + 1 == horizon:
            rec_steps.append(i + 1)
            rec_b.append(state.beliefs)
    regimes = np.zeros((horizon, 3), dtype=np.int64)
    regimes[:, 0] = sched
    return TrajectoryRecord(np.array(rec_steps), np.array(rec_b), dec, regimes, state, seed)


def run_final_batch(model, a, strategy, horizon, theta0, rngs, initial=None):
    """Final log-beliefs of independent runs, one per generator in ``rngs``.

    Each run draws its whole observation block up front from its own
    generator, which yields exactly the sequence a step-by-step run would
    consume.  Returns an array of shape ``(R, N, H)``.
    """
    a = np.asarray(a, dtype=float)
    w_mem, w_data = strategy.weights
    xi = np.stack([model.sample_network(theta0, g, steps=horizon) for g in rngs])
    n, h = model.n_agents, model.n_hypotheses
    logb = np.zeros((len(rngs), n, h)) if initial is None else \
        np.broadcast_to(initial.log_beliefs, (len(rngs), n, h)).copy()
    at = a.T
    for i in range(horizon):
        ll = model.log_likelihoods(xi[:, i])
        logb = w_mem * logb + w_data * ll
        logb = np.matmul(at, logb)
        logb -= logb.max(axis=-1, keepdims=True)
    return logb
