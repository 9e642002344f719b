"""Steady-state and transient performance descriptors.

Wrong-hypothesis quantities are returned as arrays indexed by position in
``wrong_hypotheses(H, theta0)``, i.e. hypotheses ``0..H-1`` with ``theta0``
removed, in increasing order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import (IdentifiabilityWarning, MatrixValidityError, ParameterError,
                     QuadratureError, RootBracketingError, ValidationError)
from .graph import analyze_network
from .models import llr_moments

PHI_EPSABS = 1e-12
TAYLOR_HALFWIDTH = 1e-4
TAIL_TOL = 1e-12


def wrong_hypotheses(n_hypotheses, theta0):
    if not 0 <= theta0 < n_hypotheses:
        raise ValidationError(f"true hypothesis {theta0 + 1} outside 1..{n_hypotheses}")
    return [th for th in range(n_hypotheses) if th != theta0]


def _pi(pi, n=None):
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or np.any(pi <= 0) or abs(pi.sum() - 1) > 1e-9:
        raise ValidationError("Perron vector must be positive and sum to one")
    if n is not None and pi.size != n:
        raise ValidationError(f"Perron vector has {pi.size} entries for {n} agents")
    return pi


def kl_table(model, theta0):
    """``d[l, j]``: KL divergence of agent l for the j-th wrong hypothesis."""
    wrong = wrong_hypotheses(model.n_hypotheses, theta0)
    return np.array([[model.kl(l, theta0, th) for th in wrong]
                     for l in range(model.n_agents)])


def llr_covariances(model, theta0):
    """``rho[l, i, j]``: covariance of agent l's LLRs for wrong hypotheses i, j."""
    wrong = wrong_hypotheses(model.n_hypotheses, theta0)
    h = len(wrong)
    rho = np.zeros((model.n_agents, h, h))
    for l in range(model.n_agents):
        for i in range(h):
            for j in range(i, h):
                rho[l, i, j] = rho[l, j, i] = llr_moments(model, l, theta0, wrong[i], wrong[j])[2]
    return rho


def compute_m_ave(model, pi, theta0):
    """Perron-weighted KL divergences ``m_ave(theta) = sum_l pi_l d_l(theta)``."""
    m = _pi(pi, model.n_agents) @ kl_table(model, theta0)
    if np.any(m <= 0):
        bad = [th + 1 for th, v in zip(wrong_hypotheses(model.n_hypotheses, theta0), m) if v <= 0]
        warnings.warn(f"hypotheses {bad} are not identifiable (m_ave <= 0)",
                      IdentifiabilityWarning, stacklevel=2)
    return m


def compute_C_ave(model, pi, theta0):
    """``c_ave(theta, theta') = sum_l pi_l^2 rho_l(theta, theta')``."""
    pi = _pi(pi, model.n_agents)
    c = np.einsum("l,lij->ij", pi ** 2, llr_covariances(model, theta0))
    return 0.5 * (c + c.T)


def series_weights(a, delta, truncation=None):
    """First- and second-order weights of the steady-state series.

    Returns ``(w1, w2)`` with

        w1[l, k] = delta   * sum_{m<M} (1-delta)^m  [A^{m+1}]_{lk}
        w2[l, k] = delta^2 * sum_{m<M} (1-delta)^2m [A^{m+1}]_{lk}^2

    Once the powers of ``A`` stop changing (they have reached ``pi 1^T`` to
    rounding), the remaining terms are summed in closed form.  By default
    ``M`` makes the geometric tail smaller than 1e-12.
    """
    a = np.asarray(a, dtype=float)
    if not 0 < delta <= 1:
        raise ParameterError("delta must lie in (0, 1]")
    q = 1.0 - delta
    if q == 0:
        return a.copy(), a ** 2
    if truncation is None:
        truncation = max(1, math.ceil(math.log(TAIL_TOL) / math.log(q)))
    w1 = np.zeros_like(a)
    w2 = np.zeros_like(a)
    p = a.copy()
    g = delta
    m = 0
    while m < truncation:
        w1 += g * p
        w2 += (g * p) ** 2
        m += 1
        g *= q
        nxt = a @ p
        if np.abs(nxt - p).max() < 1e-15:
            break
        p = nxt
    if m < truncation:
        left = truncation - m
        # sum_{j=m}^{M-1} delta q^j and its squared counterpart
        s1 = g * -math.expm1(left * math.log(q)) / delta
        s2 = g * g * -math.expm1(2 * left * math.log(q)) / (1 - q * q)
        w1 += s1 * p
        w2 += s2 * p ** 2
    return w1, w2


def refined_moments(model, a, delta, theta0, truncation=None):
    """Per-agent mean and covariance of the steady-state log-belief ratios.

    Returns
    -------
    m : ndarray, shape (N, H-1)
    C : ndarray, shape (N, H-1, H-1)
    """
    w1, w2 = series_weights(a, delta, truncation)
    d = kl_table(model, theta0)
    rho = llr_covariances(model, theta0)
    return w1.T @ d, np.einsum("lk,lij->kij", w2, rho)


def gaussian_error_probability(m, C, samples=10 ** 6, seed=0, chunk=200_000):
    """``P[min_theta lambda(theta) <= 0]`` for ``lambda ~ N(m, C)``.

    Returns the Monte Carlo estimate and its binomial standard error.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != (m.size, m.size) or not np.allclose(C, C.T, atol=1e-12):
        raise MatrixValidityError("covariance must be a symmetric matrix matching the mean")
    w, v = np.linalg.eigh(C)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise MatrixValidityError(f"covariance is not positive semidefinite (eigenvalue {w.min():.3e})")
    root = v * np.sqrt(np.clip(w, 0, None))
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        z = m + rng.standard_normal((b, m.size)) @ root.T
        hits += int(np.count_nonzero(z.min(axis=1) <= 0))
        done += b
    p = hits / samples
    return p, math.sqrt(p * (1 - p) / samples)


# exponents -------------------------------------------------------------------

class AverageLMGF:
    """``Lambda_ave(t) = sum_l Lambda_l(pi_l t)`` for one wrong hypothesis."""

    def __init__(self, model, pi, theta0, theta):
        if theta == theta0:
            raise ValidationError("theta must differ from the true hypothesis")
        self.model = model
        self.pi = _pi(pi, model.n_agents)
        self.theta0 = theta0
        self.theta = theta
        self.m_ave = float(sum(p * model.kl(l, theta0, theta) for l, p in enumerate(self.pi)))
        h = TAYLOR_HALFWIDTH
        self._edge = (self.ratio_direct(-h), self.ratio_direct(h))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = sum(np.asarray(self.model.lmgf(l, p * t, self.theta0, self.theta))
                  for l, p in enumerate(self.pi))
        out = np.asarray(out, dtype=float)
        return out if out.ndim else float(out)

    def ratio_direct(self, t):
        return self(t) / t

    def ratio(self, t):
        """``Lambda_ave(t)/t``, linearly bridged to ``m_ave`` on |t| < 1e-4."""
        t = np.asarray(t, dtype=float)
        h = TAYLOR_HALFWIDTH
        near = np.abs(t) < h
        safe = np.where(near, h, t)
        direct = self(safe) / safe
        lo, hi = self._edge
        bridge = self.m_ave + np.where(t < 0, (self.m_ave - lo), (hi - self.m_ave)) * t / h
        out = np.where(near, bridge, direct)
        return out if out.ndim else float(out)

    def phi(self, t):
        """``phi(t) = int_0^t Lambda_ave(tau)/tau dtau``."""
        if t == 0:
            return 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, _ = integrate.quad(self.ratio, 0.0, t, epsabs=PHI_EPSABS,
                                        epsrel=1e-12, limit=200,
                                        points=[math.copysign(TAYLOR_HALFWIDTH, t)]
                                        if abs(t) > TAYLOR_HALFWIDTH else None)
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(f"phi quadrature failed at t={t}: {exc}") from None
        return val

    def support(self):
        lo = hi = 0.0
        for l, p in enumerate(self.pi):
            a, b = self.model.llr_support(l, self.theta0, self.theta)
            lo += p * a
            hi += p * b
        return lo, hi


def lambda_ave(model, pi, t, theta0, theta):
    return AverageLMGF(model, pi, theta0, theta)(t)


def solve_t_star(model, pi, theta0, theta):
    """Negative root of ``Lambda_ave`` inside ``[-1/pi_min, -1/pi_max]``."""
    f = AverageLMGF(model, pi, theta0, theta)
    return _t_star(f)


def _t_star(f):
    if f.m_ave <= 0:
        raise ValidationError(f"hypothesis {f.theta + 1} is not identifiable; t* undefined")
    lo, hi = -1.0 / f.pi.min(), -1.0 / f.pi.max()
    flo, fhi = f(lo), f(hi)
    for t, v in ((lo, flo), (hi, fhi)):
        if abs(v) < 1e-14:
            return t
    if flo * fhi > 0:
        raise RootBracketingError(
            f"no sign change of Lambda_ave on [{lo:.6g}, {hi:.6g}]: "
            f"values {flo:.3e}, {fhi:.3e}")
    t = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    if abs(f(t)) > 1e-12:
        raise RootBracketingError(f"t* residual {abs(f(t)):.3e} exceeds 1e-12")
    return t


def phi_integral(model, pi, t, theta0, theta):
    return AverageLMGF(model, pi, theta0, theta).phi(t)


def error_exponent(model, pi, theta0):
    """Per-hypothesis exponents ``Phi(theta) = -phi(t*_theta)`` and their minimum."""
    phis = []
    for th in wrong_hypotheses(model.n_hypotheses, theta0):
        f = AverageLMGF(model, pi, theta0, th)
        phis.append(-f.phi(_t_star(f)))
    phis = np.array(phis)
    return phis, float(phis.min())


def rate_function(model, pi, gamma, theta0, theta):
    """Fenchel-Legendre transform ``sup_t [gamma t - phi(t)]``.

    Returns ``inf`` for ``gamma`` outside the open support of the weighted
    log-likelihood ratios.  The search is bounded to ``|t| <= 10/pi_min``.
    """
    f = AverageLMGF(model, pi, theta0, theta)
    lo, hi = f.support()
    if not lo < gamma < hi:
        return math.inf
    if gamma == f.m_ave:
        return 0.0
    bound = 10.0 / f.pi.min()
    span = (-bound, 0.0) if gamma < f.m_ave else (0.0, bound)
    res = optimize.minimize_scalar(lambda t: f.phi(t) - gamma * t, bounds=span,
                                   method="bounded", options={"xatol": 1e-10})
    return max(0.0, -float(res.fun))


@dataclass(frozen=True)
class SteadyStateDescriptors:
    theta0: int
    wrong: tuple
    pi: np.ndarray
    m_ave: np.ndarray
    C_ave: np.ndarray
    t_star: np.ndarray
    Phi_theta: np.ndarray
    Phi: float
    m_k_delta: np.ndarray | None = None
    C_k_delta: np.ndarray | None = None
    delta: float | None = None


def steady_state_descriptors(model, a, theta0, delta=None, analysis=None):
    """Bundle m_ave, C_ave, t*, exponents and (optionally) refined moments."""
    net = analysis or analyze_network(a)
    pi = net.pi
    wrong = wrong_hypotheses(model.n_hypotheses, theta0)
    m = compute_m_ave(model, pi, theta0)
    C = compute_C_ave(model, pi, theta0)
    ts, phis = [], []
    for th in wrong:
        f = AverageLMGF(model, pi, theta0, th)
        t = _t_star(f)
        ts.append(t)
        phis.append(-f.phi(t))
    mk = Ck = None
    if delta is not None:
        mk, Ck = refined_moments(model, a, delta, theta0)
    return SteadyStateDescriptors(theta0, tuple(wrong), pi, m, C, np.array(ts),
                                  np.array(phis), float(min(phis)), mk, Ck, delta)


# transient -------------------------------------------------------------------

@dataclass(frozen=True)
class TransientConstants:
    """Constants of the instantaneous error bound.

    ``K1[j] = |t*_j| (m_ave[j] - lambda_ave_0[j])`` and
    ``K2[j] = kappa |t*_j| sum_l |lambda_{l,0}[j]|``.
    """

    K1_theta: np.ndarray
    K2_theta: np.ndarray
    kappa: float
    beta: float
    lambda_ave_0: np.ndarray
    m_ave: np.ndarray
    t_star: np.ndarray

    @property
    def K1(self):
        return float(self.K1_theta.max())

    @property
    def K2(self):
        return float(self.K2_theta.max())

    @property
    def favorable(self):
        return bool(np.all(self.lambda_ave_0 >= self.m_ave))


def transient_constants(model, pi, kappa, lambda0, theta0, beta=None, t_star=None):
    """Evaluate K1, K2 from initial log-belief ratios ``lambda0`` (N, H-1)."""
    pi = _pi(pi, model.n_agents)
    wrong = wrong_hypotheses(model.n_hypotheses, theta0)
    lam0 = np.asarray(lambda0, dtype=float).reshape(model.n_agents, len(wrong))
    if t_star is None:
        t_star = np.array([solve_t_star(model, pi, theta0, th) for th in wrong])
    m = compute_m_ave(model, pi, theta0)
    lav0 = pi @ lam0
    at = np.abs(t_star)
    k1 = at * (m - lav0)
    k2 = kappa * at * np.abs(lam0).sum(axis=0)
    return TransientConstants(k1, k2, float(kappa), float(beta) if beta is not None else math.nan,
                              lav0, m, np.asarray(t_star))


def adaptation_time(constants, Phi, beta, delta, epsilon):
    """Steps until the nominal bound decays with exponent ``(1 - epsilon) Phi``.

    Returns ``(T, case)`` with ``case`` in ``{"favorable", "unfavorable"}``.
    """
    if not 0 < epsilon < 1:
        raise ParameterError("epsilon must lie in (0, 1)")
    if not 0 < delta <= 1:
        raise ParameterError("delta must lie in (0, 1]")
    if constants.favorable:
        K, case, rate = constants.K2, "favorable", math.log(1.0 / beta)
    else:
        K, case = constants.K1, "unfavorable"
        rate = math.inf if delta == 1 else -math.log1p(-delta)
    limit = K / Phi
    if epsilon > limit * (1 + 1e-12):
        raise ParameterError(
            f"epsilon={epsilon} outside the admissible range (< {limit:.6g}) for the {case} case")
    return max(0.0, math.log(K / (epsilon * Phi)) / rate), case


def instantaneous_bound(constants, Phi_theta, delta, i, beta=None):
    """Nominal exponent-level bound on the instantaneous error probability.

    The O(delta) term of the exact bound has no computable constant and is
    dropped, so the result is an envelope, not a calibrated probability.
    """
    beta = constants.beta if beta is None else beta
    i = np.asarray(i, dtype=float)
    q = (1.0 - delta) ** i
    expo = (-np.asarray(Phi_theta)[:, None] + constants.K1_theta[:, None] * q
            + constants.K2_theta[:, None] * q * beta ** i) / delta
    with np.errstate(over="ignore"):
        out = np.minimum(1.0, np.exp(expo).sum(axis=0))
    return out if out.ndim else float(out)


def shifted_initial_ratios(m_prev, theta0_prev, theta0, wrong_prev):
    """Log-belief ratios inherited from a previous steady state.

    In the previous regime (truth ``theta0_prev``) the ratios settle at
    ``m_prev(theta) = log mu(theta0_prev) - log mu(theta)``.  Re-referenced
    to the new truth, ``lambda_0(theta) = m_prev(theta) - m_prev(theta0)``
    with ``m_prev(theta0_prev) = 0``; in particular the old truth starts at
    the negated steady-state mean ``-m_prev(theta0)``.
    """
    full = {theta0_prev: 0.0}
    full.update(dict(zip(wrong_prev, m_prev)))
    return {th: full[th] - full[theta0] for th in full if th != theta0}


@dataclass(frozen=True)
class WorstCaseAdaptation:
    T: float
    K1: float
    Phi: float
    theta0: int
    theta0_prev: int
    matrix: int
    matrix_prev: int


def worst_case_adaptation_time(model, matrices, delta, epsilon=0.5):
    """Largest unfavorable-case adaptation time over regime transitions.

    The network starts at the steady-state means of a previous regime
    (truth ``theta0_prev`` under matrix ``matrix_prev``) and adapts to a new
    truth ``theta0`` under matrix ``matrix``; all combinations are scanned.
    """
    nets = [analyze_network(a) for a in matrices]
    H = model.n_hypotheses
    cache = {}
    for j, net in enumerate(nets):
        for th0 in range(H):
            wrong = wrong_hypotheses(H, th0)
            m = compute_m_ave(model, net.pi, th0)
            fs = [AverageLMGF(model, net.pi, th0, th) for th in wrong]
            ts = np.array([_t_star(f) for f in fs])
            phis = np.array([-f.phi(t) for f, t in zip(fs, ts)])
            cache[j, th0] = (wrong, m, ts, phis)
    best = None
    for j, net in enumerate(nets):
        for th0 in range(H):
            wrong, m, ts, phis = cache[j, th0]
            Phi = phis.min()
            for jp in range(len(nets)):
                for thp in range(H):
                    if thp == th0:
                        continue
                    wrong_p, m_p, _, _ = cache[jp, thp]
                    init = shifted_initial_ratios(m_p, thp, th0, wrong_p)
                    lam0 = np.tile([init[th] for th in wrong], (model.n_agents, 1))
                    tc = transient_constants(model, net.pi, net.kappa, lam0, th0,
                                             beta=net.beta, t_star=ts)
                    T, case = adaptation_time(tc, Phi, net.beta, delta, epsilon)
                    if best is None or T > best.T:
                        best = WorstCaseAdaptation(T, tc.K1, float(Phi), th0, thp, j, jp)
    return best
