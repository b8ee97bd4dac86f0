"""Per-round bandit policies: the logistic UCB family and four baselines.

Every policy follows the same two-step protocol each round::

    action = policy.select(t, features)
    policy.update(t, features, action, feedback)

``play_round`` wires one round together with an environment and outcomes.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from clogb.confidence import (
    RadiusParams,
    UcbVector,
    BonusVanishingRegion,
    bonus_adaptive,
    bonus_agnostic,
    bonus_post_burnin,
    build_nonlinearity_region,
    kappa_upper_bound,
    project_to_region,
    radius_beta,
    radius_nu,
    radius_sigma,
    update_bonus_vanishing_region,
)
from clogb.logistic_model import (
    EstimatorState,
    ObservationLog,
    RegularizerSchedule,
    fit_mle,
    fit_mle_constrained,
    hessian,
)
from clogb.numeric_core import PsdFactor, sigmoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlgoConfig:
    delta: float = None  # None means 1/T
    kappa_mode: str = "exact"
    projection_mode: str = "skip"
    agnostic_bonus_scale: float = 0.25
    radius_scale: float = 1.0
    mle_tol: float = None  # None means 1/T
    mle_max_iter: int = 10_000
    epsilon: float = 0.2
    t0_scale: float = 0.02
    ridge_lambda: float = 1.0
    variance_floor: float = 0.05

    def __post_init__(self):
        if self.delta is not None and not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if self.kappa_mode not in ("exact", "bound"):
            raise ValueError("kappa_mode must be 'exact' or 'bound'")
        if self.projection_mode not in ("heuristic", "skip"):
            raise ValueError("projection_mode must be 'heuristic' or 'skip'")
        if self.agnostic_bonus_scale not in (0.25, 1.0):
            raise ValueError("agnostic_bonus_scale must be 0.25 or 1.0")
        if self.radius_scale < 0:
            raise ValueError("radius_scale must be non-negative")
        if self.mle_tol is not None and self.mle_tol <= 0:
            raise ValueError("mle_tol must be positive")
        if self.mle_max_iter < 1:
            raise ValueError("mle_max_iter must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 < self.t0_scale <= 1.0:
            raise ValueError("t0_scale must lie in (0, 1]")
        if self.ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be positive")
        if not 0.0 < self.variance_floor <= 0.25:
            raise ValueError("variance_floor must lie in (0, 0.25]")

    def with_overrides(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class Problem:
    """What a policy may know about the instance before round 1."""

    d: int
    T: int
    L: float = 1.0
    kappa_exact: float = 4.0
    static_features: bool = True


def resolve_kappa(problem, config):
    if config.kappa_mode == "bound":
        return kappa_upper_bound(problem.L)
    return max(4.0, problem.kappa_exact)


def burn_in_length(params, T, t0_scale):
    """ceil(t0_scale * (4L^2+16L+19)^2 kappa d^2 log^2(4(2+T)/delta)), clamped to [1, T//2]."""
    if not 0.0 < t0_scale <= 1.0:
        raise ValueError("t0_scale must lie in (0, 1]")
    L = params.L
    raw = (4 * L * L + 16 * L + 19) ** 2 * params.kappa * params.d ** 2
    raw *= math.log(4.0 * (2.0 + T) / params.delta) ** 2
    return int(min(max(math.ceil(t0_scale * raw), 1), max(T // 2, 1)))


def burn_in_length_unclamped(params, T, t0_scale=1.0):
    L = params.L
    raw = (4 * L * L + 16 * L + 19) ** 2 * params.kappa * params.d ** 2
    return t0_scale * raw * math.log(4.0 * (2.0 + T) / params.delta) ** 2


class Policy:
    name = "policy"
    parametric = False

    def __init__(self, env, problem, config=None, rng=None):
        self.env = env
        self.problem = problem
        self.config = config or AlgoConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.round = 0

    def select(self, t, features):
        raise NotImplementedError

    def update(self, t, features, action, feedback):
        self.round = t


def play_round(policy, t, features, env, outcomes):
    action = policy.select(t, features)
    feedback = env.trigger_and_observe(action, outcomes)
    policy.update(t, features, action, feedback)
    return action, feedback


class EllipticalPotential:
    """Running sum of ||phi||^2_{V_s^-1} over triggered arms, checked against 2d log(lambda_{t+1} + t)."""

    def __init__(self, d, first_lambda, K):
        self.d = d
        self.total = 0.0
        self.violations = 0
        self.checks = 0
        self.active = first_lambda >= K
        if not self.active:
            log.info("elliptical potential check skipped: lambda_1=%.3g < K=%d", first_lambda, K)

    def add(self, t, v_factor, triggered_features, next_lambda):
        if len(triggered_features):
            self.total += float(np.sum(v_factor.inv_norm_sq(triggered_features)))
        if self.active:
            self.checks += 1
            bound = 2.0 * self.d * math.log(next_lambda + t)
            if self.total > bound:
                self.violations += 1
                log.warning("elliptical potential %.6g exceeds bound %.6g at round %d", self.total, bound, t)


class _LogisticBase(Policy):
    parametric = True

    def __init__(self, env, problem, config=None, rng=None):
        super().__init__(env, problem, config, rng)
        cfg = self.config
        d, T = problem.d, problem.T
        self.delta = cfg.delta if cfg.delta is not None else 1.0 / T
        self.tol = cfg.mle_tol if cfg.mle_tol is not None else 1.0 / T
        self.kappa = resolve_kappa(problem, cfg)
        self.params = RadiusParams(problem.L, d, env.K, self.delta, self.kappa)
        self.schedule = RegularizerSchedule(d, env.K, self.delta)
        self.obs = ObservationLog(d, max_per_round=env.K)
        self.theta_hat = np.zeros(d)
        self.nonconverged = 0
        self.potential = EllipticalPotential(d, self.schedule(1), env.K)
        # snapshot of the latest select() for diagnostics
        self.estimator = None
        self.radius = None
        self.ucbs = None
        self._v_factor = None

    def _fit(self, lam):
        res = fit_mle(self.obs, lam, tol=self.tol, max_iter=self.config.mle_max_iter,
                      warm_start=self.theta_hat)
        if not res.converged:
            self.nonconverged += 1
        self.theta_hat = res.theta
        return res.theta

    def _next_lambda(self, t):
        return self.schedule(t + 1)

    def update(self, t, features, action, feedback):
        trig = np.asarray(features)[list(feedback.triggered)]
        self.obs.add_round(trig, feedback.outcomes)
        self.potential.add(t, self._v_factor, trig, self._next_lambda(t))
        self.round = t


class CLogUCB(_LogisticBase):
    """Variance-agnostic bonus over the kappa-inflated design matrix."""

    name = "clogucb"

    def select(self, t, features):
        lam = self.schedule(t)
        theta = self._fit(lam)
        v = self.obs.gram + self.kappa * lam * np.eye(self.problem.d)
        fac = PsdFactor(v)
        beta = radius_beta(t, self.params) * self.config.radius_scale
        mean = sigmoid(features @ theta)
        bonus = bonus_agnostic(features, fac, beta, self.config.agnostic_bonus_scale)
        ucb = UcbVector(mean, bonus, np.clip(mean + bonus, 0.0, 1.0))
        self.estimator = EstimatorState(theta, lam, v, None, self.kappa)
        self.radius, self.ucbs, self._v_factor = beta, ucb, fac
        return self.env.oracle(ucb.ucb).action


class VACLogUCB(_LogisticBase):
    """Variance-adaptive bonus using the Hessian at the (optionally projected) MLE."""

    name = "va_clogucb"

    def __init__(self, env, problem, config=None, rng=None):
        super().__init__(env, problem, config, rng)
        self.region = BonusVanishingRegion(problem.d, problem.L)
        self.projections = 0
        self._beta = None
        self._theta_mle = None

    def select(self, t, features):
        lam = self.schedule(t)
        theta = self._fit(lam)
        self._theta_mle = theta
        if self.config.projection_mode == "heuristic" and not self.region.contains(theta):
            theta = project_to_region(self.region, theta, self.obs, lam, self.rng)
            self.projections += 1
        h = hessian(theta, self.obs, lam)
        v = self.obs.gram + self.kappa * lam * np.eye(self.problem.d)
        v_fac, h_fac = PsdFactor(v), PsdFactor(h)
        sigma = radius_sigma(t, self.params) * self.config.radius_scale
        mean = sigmoid(features @ theta)
        bonus = bonus_adaptive(features, theta, h_fac, v_fac, sigma, self.kappa)
        ucb = UcbVector(mean, bonus, np.clip(mean + bonus, 0.0, 1.0))
        self._beta = radius_beta(t, self.params) * self.config.radius_scale
        self.estimator = EstimatorState(theta, lam, v, h, self.kappa)
        self.radius, self.ucbs, self._v_factor = sigma, ucb, v_fac
        return self.env.oracle(ucb.ucb).action

    def update(self, t, features, action, feedback):
        trig = np.asarray(features)[list(feedback.triggered)]
        update_bonus_vanishing_region(self.region, trig, self._theta_mle, self._v_factor, self._beta)
        super().update(t, features, action, feedback)


class EVACLogUCB(_LogisticBase):
    """Uncertainty-directed burn-in, then constrained MLE inside a fixed ellipsoid."""

    name = "eva_clogucb"

    def __init__(self, env, problem, config=None, rng=None):
        if not problem.static_features:
            raise ValueError("the burn-in ellipsoid requires a time-invariant feature map")
        super().__init__(env, problem, config, rng)
        p = self.params
        self.t0 = burn_in_length(p, problem.T, self.config.t0_scale)
        self.lambda0 = p.d * math.log(4.0 * (2.0 + self.t0) / p.delta)
        self.phase = "burn_in"
        self.region = None
        self.burn_in_arms = []
        self._burn_arm = None
        self.potential = EllipticalPotential(p.d, self.lambda0, env.K)

    def _next_lambda(self, t):
        return self.lambda0 if t + 1 <= self.t0 else self.schedule(t + 1)

    def _finish_burn_in(self):
        v = self.obs.gram + self.kappa * self.lambda0 * np.eye(self.problem.d)
        theta0 = self._fit(self.lambda0)
        self.region = build_nonlinearity_region(self.obs, v, theta0, self.params, self.lambda0)
        self.phase = "learning"

    def select(self, t, features):
        d = self.problem.d
        if t <= self.t0:
            v = self.obs.gram + self.kappa * self.lambda0 * np.eye(d)
            fac = PsdFactor(v)
            width = fac.inv_norm(features)
            arm = int(np.argmax(width))
            self._burn_arm = arm
            self.burn_in_arms.append(arm)
            self._v_factor = fac
            self.estimator = None
            return self.env.burn_in_action(arm, width)
        if self.phase == "burn_in":
            self._finish_burn_in()
        lam = self.schedule(t)
        res = fit_mle_constrained(self.obs, lam, self.region, tol=self.tol,
                                  max_iter=self.config.mle_max_iter, warm_start=self.theta_hat)
        if not res.converged:
            self.nonconverged += 1
        theta = self.theta_hat = res.theta
        h = hessian(theta, self.obs, lam)
        v = self.obs.gram + self.kappa * lam * np.eye(d)
        v_fac, h_fac = PsdFactor(v), PsdFactor(h)
        nu = radius_nu(t, self.params) * self.config.radius_scale
        mean = sigmoid(features @ theta)
        bonus = bonus_post_burnin(features, theta, h_fac, v_fac, nu, self.kappa)
        ucb = UcbVector(mean, bonus, np.clip(mean + bonus, 0.0, 1.0))
        self.estimator = EstimatorState(theta, lam, v, h, self.kappa)
        self.radius, self.ucbs, self._v_factor = nu, ucb, v_fac
        return self.env.oracle(ucb.ucb).action

    def update(self, t, features, action, feedback):
        if t > self.t0:
            super().update(t, features, action, feedback)
            return
        # only the designated arm's outcome is kept during burn-in
        arm = self._burn_arm
        if arm in feedback.triggered:
            pos = feedback.triggered.index(arm)
            trig = np.asarray(features)[[arm]]
            self.obs.add_round(trig, feedback.outcomes[[pos]])
        else:
            trig = np.empty((0, self.problem.d))
            self.obs.add_round(trig, [])
        self.potential.add(t, self._v_factor, trig, self._next_lambda(t))
        self.round = t


# ---------------------------------------------------------------------------
# baselines


class _CountingBase(Policy):
    def __init__(self, env, problem, config=None, rng=None):
        super().__init__(env, problem, config, rng)
        self.counts = np.zeros(env.m)
        self.sums = np.zeros(env.m)

    def update(self, t, features, action, feedback):
        idx = list(feedback.triggered)
        np.add.at(self.counts, idx, 1.0)
        np.add.at(self.sums, idx, feedback.outcomes)
        self.round = t


class CUCB(_CountingBase):
    name = "cucb"

    def select(self, t, features):
        seen = self.counts > 0
        ucb = np.ones(self.env.m)
        n = self.counts[seen]
        ucb[seen] = self.sums[seen] / n + np.sqrt(3.0 * math.log(t) / (2.0 * n))
        return self.env.oracle(np.clip(ucb, 0.0, 1.0)).action


class EpsilonGreedy(_CountingBase):
    """Unobserved arms are treated as mean 1 so that each gets tried."""

    name = "epsilon_greedy"

    def select(self, t, features):
        if self.rng.random() < self.config.epsilon:
            return self.env.random_action(self.rng)
        means = np.ones(self.env.m)
        seen = self.counts > 0
        means[seen] = self.sums[seen] / self.counts[seen]
        # keep every arm usable by product-form oracles
        return self.env.oracle(np.clip(means, 1e-9, 1.0)).action


class LinearUCB(Policy):
    """Ridge regression on (phi, X) with bonus c ||phi||_{V^-1}, c = sqrt(d log((1 + tK)/delta))."""

    name = "linucb"

    def __init__(self, env, problem, config=None, rng=None):
        super().__init__(env, problem, config, rng)
        d = problem.d
        self.delta = self.config.delta if self.config.delta is not None else 1.0 / problem.T
        self.v = self.config.ridge_lambda * np.eye(d)
        self.b = np.zeros(d)
        self.theta_hat = np.zeros(d)

    def _bonus_scale(self, t):
        return self.config.radius_scale * math.sqrt(
            self.problem.d * math.log((1.0 + t * self.env.K) / self.delta))

    def select(self, t, features):
        fac = PsdFactor(self.v)
        self.theta_hat = fac.solve(self.b)
        ucb = features @ self.theta_hat + self._bonus_scale(t) * fac.inv_norm(features)
        return self.env.oracle(np.clip(ucb, 0.0, 1.0)).action

    def _weights(self, trig):
        return np.ones(trig.shape[0])

    def update(self, t, features, action, feedback):
        trig = np.asarray(features)[list(feedback.triggered)]
        w = self._weights(trig)
        self.v += (trig * w[:, None]).T @ trig
        self.b += (w * feedback.outcomes) @ trig
        self.round = t


class VALinearUCB(LinearUCB):
    """Ridge regression weighted by inverse estimated Bernoulli variances."""

    name = "va_linucb"

    def _weights(self, trig):
        p = np.clip(trig @ self.theta_hat, 0.0, 1.0)
        return 1.0 / np.maximum(p * (1.0 - p), self.config.variance_floor)


ALGORITHMS = {
    cls.name: cls
    for cls in (CLogUCB, VACLogUCB, EVACLogUCB, CUCB, EpsilonGreedy, LinearUCB, VALinearUCB)
}
PAPER_ALGORITHMS = ("clogucb", "va_clogucb", "eva_clogucb")


def make_policy(name, env, problem, config=None, rng=None):
    try:
        cls = ALGORITHMS[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {sorted(ALGORITHMS)}") from None
    return cls(env, problem, config, rng)
