"""Confidence radii, exploration bonuses, UCB assembly, and restricted regions."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from clogb.logistic_model import Ellipsoid, g_map, hessian
from clogb.numeric_core import PsdFactor, sigmoid, sigmoid_deriv

AGNOSTIC = "agnostic"
ADAPTIVE = "adaptive"
POST_BURNIN = "post_burnin"
UCB_KINDS = (AGNOSTIC, ADAPTIVE, POST_BURNIN)


@dataclass(frozen=True)
class RadiusParams:
    L: float
    d: int
    K: int
    delta: float
    kappa: float

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.kappa < 4:
            raise ValueError("kappa must be >= 4 (the sigmoid slope never exceeds 1/4)")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if self.d < 1 or self.K < 1:
            raise ValueError("d and K must be >= 1")


def kappa_upper_bound(L):
    """Parameter-norm based bound 4 exp(L)."""
    return 4.0 * math.exp(L)


def _log_term(t, p):
    if t < 1:
        raise ValueError("t must be >= 1")
    return p.d * math.log(4.0 * (1.0 + t * p.K) / p.delta)


def radius_gamma(t, params):
    return (params.L + 1.5) * math.sqrt(_log_term(t, params))


def radius_beta(t, params):
    L = params.L
    return (L * L + 4 * L + 4.75) * math.sqrt(params.kappa * _log_term(t, params))


def radius_sigma(t, params):
    L = params.L
    return (2 * L + 1) * (2 * L + 3) * math.sqrt(_log_term(t, params))


def radius_nu(t, params):
    return 3.0 * (params.L + 1.5) * math.sqrt(_log_term(t, params))


def _factor(m):
    return m if isinstance(m, PsdFactor) else PsdFactor(m)


def bonus_agnostic(feature, v_matrix, beta, scale=0.25):
    """scale * beta * ||phi||_{V^-1}; the default scale is 1/4.

    ``feature`` may be one vector or an (m, d) array; matrices may be passed
    pre-factorized as :class:`PsdFactor`.
    """
    return scale * beta * _factor(v_matrix).inv_norm(feature)


def _adaptive_form(feature, theta, h_matrix, v_matrix, radius, kappa, lead):
    feature = np.asarray(feature, dtype=float)
    slope = sigmoid_deriv(feature @ np.asarray(theta, dtype=float))
    first = lead * radius * slope * _factor(h_matrix).inv_norm(feature)
    second = 0.125 * kappa * radius ** 2 * _factor(v_matrix).inv_norm_sq(feature)
    return first + second


def bonus_adaptive(feature, theta_hat_h, hessian_at_hat, v_matrix, sigma, kappa):
    """sigma * slope * ||phi||_{H^-1} + kappa sigma^2 / 8 * ||phi||^2_{V^-1}."""
    return _adaptive_form(feature, theta_hat_h, hessian_at_hat, v_matrix, sigma, kappa, 1.0)


def bonus_post_burnin(feature, theta_hat_e, hessian_at_hat, v_matrix, nu, kappa):
    """As :func:`bonus_adaptive` with nu and an extra sqrt(e) on the first term."""
    return _adaptive_form(feature, theta_hat_e, hessian_at_hat, v_matrix, nu, kappa, math.sqrt(math.e))


@dataclass
class UcbVector:
    mean_estimate: np.ndarray
    bonus: np.ndarray
    ucb: np.ndarray

    @property
    def raw(self):
        """Unclamped mean_estimate + bonus."""
        return self.mean_estimate + self.bonus


def assemble_ucbs(estimator, features, kind, radius, agnostic_bonus_scale=0.25):
    """Per-arm clamped UCBs from one estimator snapshot.

    ``radius`` is beta for ``agnostic``, sigma for ``adaptive`` and nu for
    ``post_burnin``.  V (and H, when needed) are factorized once for all arms.
    """
    if kind not in UCB_KINDS:
        raise ValueError(f"unknown UCB kind {kind!r}")
    features = np.atleast_2d(np.asarray(features, dtype=float))
    mean = sigmoid(features @ estimator.theta_hat)
    v_fac = PsdFactor(estimator.covariance_v)
    if kind == AGNOSTIC:
        bonus = bonus_agnostic(features, v_fac, radius, agnostic_bonus_scale)
    else:
        h_fac = PsdFactor(estimator.hessian_at_hat)
        form = bonus_adaptive if kind == ADAPTIVE else bonus_post_burnin
        bonus = form(features, estimator.theta_hat, h_fac, v_fac, radius, estimator.kappa)
    bonus = np.asarray(bonus, dtype=float)
    return UcbVector(mean, bonus, np.clip(mean + bonus, 0.0, 1.0))


class BonusVanishingRegion:
    """{theta : ||theta|| <= L and |theta.phi_j| <= cap_j for every stored j}.

    Starts as the whole parameter ball.  Constraints accumulate in place.
    """

    def __init__(self, dim, L):
        self.dim = int(dim)
        self.L = float(L)
        self._features = np.empty((0, self.dim))
        self._caps = np.empty(0)

    def __len__(self):
        return self._caps.shape[0]

    @property
    def features(self):
        return self._features

    @property
    def caps(self):
        return self._caps

    def add(self, features, caps):
        features = np.asarray(features, dtype=float).reshape(-1, self.dim)
        caps = np.asarray(caps, dtype=float).reshape(-1)
        if np.any(caps < 0):
            raise ValueError("caps must be non-negative")
        self._features = np.vstack([self._features, features])
        self._caps = np.concatenate([self._caps, caps])

    def violation(self, theta):
        """Largest constraint violation (<= 0 means feasible)."""
        theta = np.asarray(theta, dtype=float)
        worst = float(np.linalg.norm(theta)) - self.L
        if len(self):
            worst = max(worst, float(np.max(np.abs(self._features @ theta) - self._caps)))
        return worst

    def contains(self, theta, tol=1e-9):
        return self.violation(theta) <= tol


def update_bonus_vanishing_region(region, triggered_features, theta_hat, v_matrix, beta):
    """Add |theta.phi| <= |theta_hat.phi| + beta ||phi||_{V^-1} per triggered feature.

    The cap is the closed-form sup of |theta.phi| over the ellipsoid
    ||theta - theta_hat||_V <= beta.  Mutates and returns ``region``.
    """
    triggered_features = np.asarray(triggered_features, dtype=float).reshape(-1, region.dim)
    if triggered_features.shape[0] == 0:
        return region
    caps = np.abs(triggered_features @ theta_hat) + beta * _factor(v_matrix).inv_norm(triggered_features)
    region.add(triggered_features, caps)
    return region


def project_to_region(region, theta_hat, log, lambda_t, rng, restarts=8, penalty=1e4):
    """Heuristic for argmin_{theta in Q} ||g(theta) - g(theta_hat)||_{H(theta)^-1}.

    Penalized local search from ``restarts`` starting points (the first is
    theta_hat scaled into the ball, the rest uniform in the ball).  Returns the
    best feasible point found, or the scaled theta_hat if none is feasible.
    """
    d = region.dim
    target = g_map(theta_hat, log, lambda_t)

    def objective(theta):
        diff = g_map(theta, log, lambda_t) - target
        h = hessian(theta, log, lambda_t)
        val = float(diff @ np.linalg.solve(h, diff))
        viol = np.maximum(np.abs(region.features @ theta) - region.caps, 0.0) if len(region) else np.zeros(0)
        ball = max(float(np.linalg.norm(theta)) - region.L, 0.0)
        return val + penalty * (float(viol @ viol) + ball * ball)

    norm = float(np.linalg.norm(theta_hat))
    fallback = theta_hat if norm <= region.L else theta_hat * (region.L / norm)
    starts = [fallback]
    for _ in range(restarts - 1):
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        starts.append(direction * region.L * rng.uniform() ** (1.0 / d))
    best, best_val = None, math.inf
    for x0 in starts:
        res = minimize(objective, x0, method="L-BFGS-B")
        cand = res.x
        if region.contains(cand, tol=1e-6):
            diff = g_map(cand, log, lambda_t) - target
            val = float(diff @ np.linalg.solve(hessian(cand, log, lambda_t), diff))
            if val < best_val:
                best, best_val = cand, val
    return fallback.copy() if best is None else best


def nonlinearity_region_radius(params, lambda0):
    L = params.L
    return (L * L + 4 * L + 4.75) * math.sqrt(params.kappa * lambda0)


def build_nonlinearity_region(burn_in_log, v_t0, theta_hat_t0, params, lambda0):
    """Ellipsoid around the burn-in MLE, shaped by the burn-in covariance."""
    del burn_in_log  # the region depends on the log only through v_t0 and theta_hat_t0
    return Ellipsoid(theta_hat_t0, v_t0, nonlinearity_region_radius(params, lambda0))
