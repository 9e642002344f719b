"""Per-agent likelihood families.

Each family stores one parameter per (agent, hypothesis) and provides
sampling, log-likelihoods, KL divergences, and the logarithmic moment
generating function (LMGF) of the log-likelihood ratio

    x_k(theta) = log L_k(xi | theta0) - log L_k(xi | theta),   xi ~ L_k(. | theta0).

Hypotheses and agents are 0-based in the API and 1-based in text files.
"""

from __future__ import annotations

import math
import warnings
from pathlib import Path

import numpy as np
from scipy import integrate

from .errors import (DegeneratePairError, ModelOverflowError, QuadratureError,
                     SupportViolationError, ValidationError)

LOG2 = math.log(2.0)
QUAD_EPSREL = 1e-10
QUAD_EPSABS = 1e-13


class LikelihoodModel:
    """Common interface; subclasses fill in the family-specific pieces.

    Parameters
    ----------
    params : array_like, shape (N, H)
        Location (or mean) of agent k's likelihood under hypothesis theta.
    """

    family = "abstract"

    def __init__(self, params):
        p = np.array(params, dtype=float)
        if p.ndim != 2:
            raise ValidationError("parameters must be an (agents, hypotheses) table")
        if p.shape[1] < 2:
            raise ValidationError("at least two hypotheses are required")
        if not np.all(np.isfinite(p)):
            raise ValidationError("parameters must be finite")
        p.setflags(write=False)
        self.params = p

    @property
    def n_agents(self):
        return self.params.shape[0]

    @property
    def n_hypotheses(self):
        return self.params.shape[1]

    def __eq__(self, other):
        return (type(self) is type(other)
                and np.array_equal(self.params, other.params))

    def __hash__(self):
        return hash((self.family, self.params.tobytes()))

    def __repr__(self):
        return f"{type(self).__name__}({self.params.tolist()!r})"

    def delta(self, k, theta0, theta):
        return float(self.params[k, theta] - self.params[k, theta0])

    # sampling -----------------------------------------------------------

    def noise(self, rng, shape):
        raise NotImplementedError

    def sample(self, k, theta0, rng, size=None):
        """Draw observations of agent ``k`` under hypothesis ``theta0``."""
        shape = () if size is None else size
        return self.params[k, theta0] + self.noise(rng, shape)

    def sample_network(self, theta0, rng, steps=None):
        """One observation per agent (shape ``(N,)``), or ``(steps, N)``.

        Drawing a block is bit-identical to drawing ``steps`` rows in turn.
        """
        shape = (self.n_agents,) if steps is None else (steps, self.n_agents)
        return self.params[:, theta0] + self.noise(rng, shape)

    # likelihoods --------------------------------------------------------

    def log_density(self, xi, loc):
        raise NotImplementedError

    def log_likelihoods(self, xi):
        """Log-likelihoods for all agents and hypotheses.

        ``xi`` has shape ``(..., N)``; the result has shape ``(..., N, H)``.
        """
        xi = np.asarray(xi, dtype=float)
        return self.log_density(xi[..., None], self.params)

    def llr(self, xi, theta0):
        """Log-likelihood ratios against ``theta0``; shape ``(..., N, H)``."""
        ll = self.log_likelihoods(xi)
        return ll[..., theta0:theta0 + 1] - ll

    def log_likelihood(self, k, xi, theta):
        return self.log_density(np.asarray(xi, dtype=float), self.params[k, theta])

    # statistics ---------------------------------------------------------

    def kl(self, k, theta0, theta):
        raise NotImplementedError

    def lmgf(self, k, t, theta0, theta):
        raise NotImplementedError

    def llr_support(self, k, theta0, theta):
        """Closed interval containing every value of ``x_k(theta)``."""
        raise NotImplementedError

    def kinks(self, k, *thetas):
        return sorted({float(self.params[k, th]) for th in thetas})


class LaplaceFamily(LikelihoodModel):
    """Unit-scale Laplace likelihoods ``f(xi) = exp(-|xi - e|)/2``."""

    family = "laplace"

    def noise(self, rng, shape):
        return rng.laplace(size=shape)

    def log_density(self, xi, loc):
        return -LOG2 - np.abs(xi - loc)

    def kl(self, k, theta0, theta):
        d = abs(self.delta(k, theta0, theta))
        return d + math.expm1(-d)

    def lmgf(self, k, t, theta0, theta):
        return laplace_llr_lmgf(t, self.delta(k, theta0, theta))

    def llr_support(self, k, theta0, theta):
        d = abs(self.delta(k, theta0, theta))
        return -d, d


class GaussianFamily(LikelihoodModel):
    """Unit-variance Gaussian likelihoods; ``params`` are the means."""

    family = "gaussian"

    def noise(self, rng, shape):
        return rng.standard_normal(size=shape)

    def log_density(self, xi, loc):
        return -0.5 * math.log(2 * math.pi) - 0.5 * (xi - loc) ** 2

    def kl(self, k, theta0, theta):
        return 0.5 * self.delta(k, theta0, theta) ** 2

    def lmgf(self, k, t, theta0, theta):
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            d = 0.5 * np.float64(self.delta(k, theta0, theta)) ** 2
            out = d * t * (t + 1.0)
        if not np.all(np.isfinite(out)):
            raise ModelOverflowError(f"{self.family} LMGF overflows at the requested t")
        return out if out.ndim else float(out)

    def llr_support(self, k, theta0, theta):
        if self.delta(k, theta0, theta) == 0:
            return 0.0, 0.0
        return -math.inf, math.inf


FAMILIES = {"laplace": LaplaceFamily, "gaussian": GaussianFamily}


def _log_sinhc(delta, s):
    """log(sinh(delta*s)/s) for delta > 0, even in s, finite at s = 0."""
    y = delta * np.abs(s)
    small = y < 1e-4
    ys = np.where(small, 1.0, y)
    big = ys + np.log1p(-np.exp(-2.0 * ys)) - LOG2 - np.log(np.where(small, 1.0, np.abs(s)))
    y2 = y * y
    series = math.log(delta) + np.log1p(y2 / 6.0 + y2 * y2 / 120.0)
    return np.where(small, series, big)


def laplace_llr_lmgf(t, delta):
    """LMGF of the Laplace log-likelihood ratio with location gap ``delta``.

    With ``s = t + 1/2`` and ``D = |delta|``,

        Lambda(t) = log[ e^{-D(t+1)}/2 + e^{D t}/2 + e^{-D/2} sinh(D s)/(2 s) ],

    evaluated as a log-sum-exp so that large |t| cannot overflow.  The
    removable singularity at ``s = 0`` is handled by a series.
    """
    t = np.asarray(t, dtype=float)
    d = abs(float(delta))
    if d == 0:
        out = np.zeros_like(t)
    else:
        s = t + 0.5
        terms = np.stack([-d * (t + 1.0), d * t, -0.5 * d + _log_sinhc(d, s)])
        out = np.logaddexp.reduce(terms, axis=0) - LOG2
    return out if out.ndim else float(out)


# generic operations ------------------------------------------------------

def _check_pair(theta, theta0):
    if theta == theta0:
        raise DegeneratePairError(f"hypothesis {theta + 1} equals the true hypothesis")


def log_likelihood_ratio(model, k, xi, theta, theta0):
    """``log L_k(xi|theta0) - log L_k(xi|theta)``."""
    _check_pair(theta, theta0)
    a = model.log_likelihood(k, xi, theta0)
    b = model.log_likelihood(k, xi, theta)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SupportViolationError("observation outside the likelihood support")
    return a - b


def kl_divergence(model, k, theta0, theta):
    _check_pair(theta, theta0)
    return model.kl(k, theta0, theta)


def lmgf(model, k, t, theta0, theta):
    _check_pair(theta, theta0)
    return model.lmgf(k, t, theta0, theta)


def expectation(model, k, theta0, func, breakpoints=()):
    """``E[func(xi)]`` for ``xi ~ L_k(.|theta0)`` by adaptive quadrature.

    The real line is split at the likelihood kinks so that each piece is
    smooth; tails are integrated on infinite intervals.
    """
    loc = float(model.params[k, theta0])
    pts = sorted(set([loc, *map(float, breakpoints)]))

    def integrand(xi):
        return func(xi) * math.exp(float(model.log_density(xi, loc)))

    edges = [-math.inf, *pts, math.inf]
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            if lo == hi:
                continue
            try:
                val, _ = integrate.quad(integrand, lo, hi, epsabs=QUAD_EPSABS,
                                        epsrel=QUAD_EPSREL, limit=200)
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(f"quadrature failed on [{lo}, {hi}]: {exc}") from None
            total += val
    if not math.isfinite(total):
        raise QuadratureError("quadrature returned a non-finite value")
    return total


def llr_moments(model, k, theta0, theta, theta_p):
    """Means of ``x_k(theta)``, ``x_k(theta_p)`` and their covariance.

    Means are the closed-form KL divergences; the covariance is integrated
    over the ``theta0`` density.
    """
    _check_pair(theta, theta0)
    _check_pair(theta_p, theta0)
    m1 = model.kl(k, theta0, theta)
    m2 = model.kl(k, theta0, theta_p)
    e0 = model.params[k, theta0]
    e1 = model.params[k, theta]
    e2 = model.params[k, theta_p]
    if e1 == e0 or e2 == e0:
        return m1, m2, 0.0

    def prod(xi):
        ld0 = model.log_density(xi, e0)
        return ((ld0 - model.log_density(xi, e1) - m1)
                * (ld0 - model.log_density(xi, e2) - m2))

    rho = expectation(model, k, theta0, prod, model.kinks(k, theta0, theta, theta_p))
    return m1, m2, rho


# model assignment files --------------------------------------------------

def _parse_range(tok, lineno):
    try:
        if "-" in tok:
            a, b = tok.split("-", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(tok)
    except ValueError:
        raise ValidationError(f"line {lineno}: bad agent range {tok!r}") from None
    if lo < 1 or hi < lo:
        raise ValidationError(f"line {lineno}: empty or invalid agent range {tok!r}")
    return lo - 1, hi


def parse_model_assignment(text, family=None):
    """Parse rows ``agent_range hypothesis location`` into a likelihood model.

    An optional ``family NAME`` line selects the family (default Laplace).
    Every (agent, hypothesis) pair must be assigned exactly once.
    """
    fam = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0].lower() == "family":
            if len(tok) != 2 or tok[1].lower() not in FAMILIES:
                raise ValidationError(f"line {lineno}: unknown family line {line!r}")
            fam = tok[1].lower()
            continue
        if len(tok) != 3:
            raise ValidationError(f"line {lineno}: expected 'agents hypothesis location'")
        lo, hi = _parse_range(tok[0], lineno)
        try:
            th, loc = int(tok[1]) - 1, float(tok[2])
        except ValueError:
            raise ValidationError(f"line {lineno}: bad hypothesis or location") from None
        if th < 0:
            raise ValidationError(f"line {lineno}: hypotheses are numbered from 1")
        rows.append((lineno, lo, hi, th, loc))
    if not rows:
        raise ValidationError("model assignment is empty")
    n = max(r[2] for r in rows)
    h = max(r[3] for r in rows) + 1
    table = np.full((n, h), np.nan)
    for lineno, lo, hi, th, loc in rows:
        if not np.all(np.isnan(table[lo:hi, th])):
            raise ValidationError(f"line {lineno}: pair assigned twice")
        table[lo:hi, th] = loc
    if np.isnan(table).any():
        ks, ts = np.nonzero(np.isnan(table))
        raise ValidationError(
            f"missing assignment for (agent, hypothesis) = ({ks[0] + 1}, {ts[0] + 1})")
    name = (family or fam or "laplace").lower()
    if name not in FAMILIES:
        raise ValidationError(f"unknown family {name!r}")
    return FAMILIES[name](table)


def load_model_assignment(path, family=None):
    return parse_model_assignment(Path(path).read_text(), family)


def format_model_assignment(model):
    lines = [f"family {model.family}"]
    for k in range(model.n_agents):
        for th in range(model.n_hypotheses):
            lines.append(f"{k + 1} {th + 1} {float(model.params[k, th])!r}")
    return "\n".join(lines) + "\n"
