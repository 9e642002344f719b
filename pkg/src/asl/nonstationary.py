"""Markov-modulated environments.

Three mutually independent chains drive the environment:

* the true hypothesis, a birth-death chain over ``0..H-1`` (interior states
  move to either neighbor with probability ``q_hyp`` each, edge states move
  inward with probability ``q_hyp``);
* the combination matrix, a two-state chain switching with ``q_mat``;
* the functioning state (nominal, perturbed, bad), a birth-death chain with
  ``q_fun``.

In the perturbed and bad states zero-mean Gaussian noise is added to the
observations while the agents keep using the nominal likelihoods.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import (BeliefState, TrajectoryRecord, decide, step, streams)
from .errors import ParameterError, PlanValidationError, ValidationError

NOMINAL, PERTURBED, BAD = 0, 1, 2


@dataclass(frozen=True)
class RegimeProcess:
    q_hyp: float
    q_mat: float
    q_fun: float
    n_hypotheses: int = 3

    def __post_init__(self):
        for name in ("q_hyp", "q_mat", "q_fun"):
            q = getattr(self, name)
            if not 0 <= q < 0.5:
                raise ParameterError(f"{name} must lie in [0, 1/2), got {q}")
        if self.n_hypotheses < 2:
            raise ParameterError("at least two hypotheses are required")


@dataclass(frozen=True)
class RegimeState:
    hypothesis: int = 0
    matrix: int = 0
    functioning: int = NOMINAL


@dataclass(frozen=True)
class PerturbationModel:
    sigma_perturbed: float = 0.5
    sigma_bad: float = 5.0

    def __post_init__(self):
        if not 0 <= self.sigma_perturbed < self.sigma_bad:
            raise ParameterError("need 0 <= sigma_perturbed < sigma_bad")

    def sigma(self, functioning):
        return (0.0, self.sigma_perturbed, self.sigma_bad)[functioning]


def birth_death(state, q, u, n):
    """Move a birth-death chain on ``0..n-1`` given uniforms ``u`` (vectorized)."""
    state = np.asarray(state)
    edge_lo = state == 0
    edge_hi = state == n - 1
    down = np.where(edge_lo, False, np.where(edge_hi, u < q, u < q))
    up = np.where(edge_hi, False, np.where(edge_lo, u < q, (u >= q) & (u < 2 * q)))
    return state - down + up


def flip(state, q, u):
    state = np.asarray(state)
    return np.where(u < q, 1 - state, state)


def step_regimes_array(states, process, u):
    """Advance regimes stored as an ``(..., 3)`` integer array with uniforms ``u``."""
    s = np.asarray(states)
    out = np.empty_like(s)
    out[..., 0] = birth_death(s[..., 0], process.q_hyp, u[..., 0], process.n_hypotheses)
    out[..., 1] = flip(s[..., 1], process.q_mat, u[..., 1])
    out[..., 2] = birth_death(s[..., 2], process.q_fun, u[..., 2], 3)
    return out


def step_regimes(state, process, rng):
    u = rng.random(3)
    h, m, f = step_regimes_array(np.array([state.hypothesis, state.matrix, state.functioning]),
                                 process, u)
    return RegimeState(int(h), int(m), int(f))


@dataclass(frozen=True)
class CycleStats:
    q_star: float
    T_LC: float
    diverged: bool


def worst_case_cycle_stats(q_hyp, q_mat, q_fun):
    """Stay probability and mean duration of the compound worst-case state.

    The slowest-to-leave compound state combines the interior hypothesis,
    a fixed matrix and the perturbed functioning state; it is left as soon
    as any of the three chains moves:
    ``q* = (1 - 2 q_hyp)(1 - q_mat)(1 - 2 q_fun)`` and
    ``T_LC = q*/(1 - q*)``.
    """
    q_star = (1 - 2 * q_hyp) * (1 - q_mat) * (1 - 2 * q_fun)
    if q_star > 1 - 1e-12:
        return CycleStats(q_star, 1e12, True)
    return CycleStats(q_star, q_star / (1 - q_star), False)


def simulate_sojourns(process, count, seed=0):
    """Extra steps spent in the compound worst-case state after entering it.

    ``count`` independent copies start in (hypothesis 2, matrix 1, perturbed)
    and are advanced with the regular transition rule until each leaves.
    The mean of the returned array estimates ``T_LC``.
    """
    rng = np.random.default_rng(seed)
    start = np.array([1, 0, PERTURBED])
    stay = np.zeros(count, dtype=np.int64)
    alive = np.arange(count)
    while alive.size:
        u = rng.random((alive.size, 3))
        nxt = step_regimes_array(np.broadcast_to(start, (alive.size, 3)), process, u)
        same = (nxt == start).all(axis=1)
        stay[alive[same]] += 1
        alive = alive[same]
    return stay


@dataclass(frozen=True)
class Environment:
    process: RegimeProcess
    matrices: tuple
    perturbation: PerturbationModel = field(default_factory=PerturbationModel)
    initial: RegimeState = field(default_factory=RegimeState)


def run_nonstationary(model, env, strategy, horizon, seed, initial=None, record_every=1):
    """Simulate learning in a Markov-modulated environment.

    Each step first advances the regimes, then draws observations from the
    current true hypothesis, adds the functioning-state noise and applies
    the current combination matrix.
    """
    if horizon < 1:
        raise PlanValidationError("horizon must be at least 1")
    if env.process.n_hypotheses != model.n_hypotheses:
        raise ValidationError("regime process and model disagree on the number of hypotheses")
    obs_rng, reg_rng, noise_rng = streams(seed)
    mats = [np.asarray(a, dtype=float) for a in env.matrices]
    state = initial if initial is not None else BeliefState.uniform(model.n_agents, model.n_hypotheses)
    regime = env.initial
    regimes = np.empty((horizon, 3), dtype=np.int64)
    dec = np.empty((horizon, model.n_agents), dtype=np.int64)
    rec_steps, rec_b = [], []
    for i in range(horizon):
        regime = step_regimes(regime, env.process, reg_rng)
        regimes[i] = (regime.hypothesis, regime.matrix, regime.functioning)
        xi = model.sample_network(regime.hypothesis, obs_rng)
        if regime.functioning != NOMINAL:
            xi = xi + env.perturbation.sigma(regime.functioning) * noise_rng.standard_normal(xi.shape)
        state = step(state, strategy, model, xi, mats[regime.matrix])
        dec[i] = state.decisions()
        if (i + 1) % record_every == 0 or i + 1 == horizon:
            rec_steps.append(i + 1)
            rec_b.append(state.beliefs)
    return TrajectoryRecord(np.array(rec_steps), np.array(rec_b), dec, regimes, state, seed)


def majority_decision(decisions, n_hypotheses):
    """Most frequent decision across agents per step; ties to the lowest index."""
    d = np.asarray(decisions)
    counts = (d[..., None] == np.arange(n_hypotheses)).sum(axis=-2)
    return decide(counts)


@dataclass(frozen=True)
class ChangeRecovery:
    step: int
    old: int
    new: int
    preceding: int
    duration: int | None
    bad: bool
    censored: bool


@dataclass
class RecoveryStats:
    changes: list

    @property
    def times(self):
        """Durations of completed recoveries outside bad functioning."""
        return [c.duration for c in self.changes if not c.bad and not c.censored]

    @property
    def bad_times(self):
        return [c.duration for c in self.changes if c.bad and not c.censored]


def recovery_time_statistics(record, persistence=10, n_hypotheses=None):
    """Recovery duration after every change of the true hypothesis.

    The duration counts the steps under the new hypothesis until the
    network-majority decision equals it and stays so for ``persistence``
    consecutive steps.  A change whose window meets the next change (or the
    end of the record) before recovering is censored; a change during whose
    window the functioning state is bad is flagged ``bad``.
    """
    truth = record.regimes[:, 0]
    fun = record.regimes[:, 2]
    if n_hypotheses is None:
        n_hypotheses = int(max(truth.max(), record.decisions.max())) + 1
    maj = majority_decision(record.decisions, n_hypotheses)
    idx = np.flatnonzero(truth[1:] != truth[:-1]) + 1
    bounds = list(idx) + [len(truth)]
    starts = [0] + list(idx)
    out = []
    for j, c in enumerate(idx):
        end = bounds[j + 1]
        new = truth[c]
        ok = maj[c:end] == new
        duration = None
        run = 0
        for s, good in enumerate(ok):
            run = run + 1 if good else 0
            if run == persistence:
                duration = s - persistence + 2
                break
        stop = end if duration is None else c + duration - 1 + persistence
        out.append(ChangeRecovery(int(c) + 1, int(truth[c - 1]), int(new), int(c - starts[j]),
                                  duration, bool(np.any(fun[c:stop] == BAD)), duration is None))
    return RecoveryStats(out)
