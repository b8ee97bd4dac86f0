"""Regularized logistic log-loss, its derivatives, and the MLE solvers.

The loss over the triggered-arm history is

    L(theta) = sum_j [softplus(theta.phi_j) - X_j theta.phi_j] + lambda/2 ||theta||^2

which equals the cross-entropy form but never evaluates log(0).
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from clogb.numeric_core import sigmoid, sigmoid_deriv


class ConvergenceWarning(UserWarning):
    pass


class ObservationLog:
    """History of (feature, outcome) pairs from triggered arms, grouped by round.

    Besides the raw history, observations are pooled by distinct feature
    vector (count and number of ones per vector).  The loss and its derivatives
    only depend on these pooled statistics, so a static feature map costs O(m)
    per evaluation however long the history.  ``sum_x_phi`` and ``gram`` are
    maintained incrementally.
    """

    def __init__(self, dim, max_per_round=None):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.max_per_round = max_per_round
        self._features = np.empty((64, self.dim))
        self._outcomes = np.empty(64)
        self._count = 0
        self._round_ends = []
        self.sum_x_phi = np.zeros(self.dim)
        self.gram = np.zeros((self.dim, self.dim))
        self._row_of = {}
        self._ufeat = np.empty((16, self.dim))
        self._ucount = np.zeros(16)
        self._usum = np.zeros(16)
        self._n_unique = 0

    def __len__(self):
        return self._count

    @property
    def total_count(self):
        return self._count

    @property
    def n_rounds(self):
        return len(self._round_ends)

    @property
    def features(self):
        return self._features[: self._count]

    @property
    def outcomes(self):
        return self._outcomes[: self._count]

    @property
    def unique_features(self):
        return self._ufeat[: self._n_unique]

    @property
    def counts(self):
        """Number of observations of each distinct feature vector."""
        return self._ucount[: self._n_unique]

    @property
    def successes(self):
        """Number of outcome-1 observations of each distinct feature vector."""
        return self._usum[: self._n_unique]

    def _pool(self, features, outcomes):
        for row, x in zip(features, outcomes):
            key = row.tobytes()
            j = self._row_of.get(key)
            if j is None:
                j = self._n_unique
                if j == self._ufeat.shape[0]:
                    cap = 2 * j
                    self._ufeat = np.vstack([self._ufeat, np.empty((cap - j, self.dim))])
                    self._ucount = np.concatenate([self._ucount, np.zeros(cap - j)])
                    self._usum = np.concatenate([self._usum, np.zeros(cap - j)])
                self._ufeat[j] = row
                self._row_of[key] = j
                self._n_unique += 1
            self._ucount[j] += 1.0
            self._usum[j] += x

    def add_round(self, features, outcomes):
        """Append one round of triggered observations (possibly empty)."""
        features = np.asarray(features, dtype=float).reshape(-1, self.dim)
        outcomes = np.asarray(outcomes, dtype=float).reshape(-1)
        k = features.shape[0]
        if outcomes.shape[0] != k:
            raise ValueError("features and outcomes must have the same length")
        if self.max_per_round is not None and k > self.max_per_round:
            raise ValueError(f"{k} observations exceed the per-round cap {self.max_per_round}")
        if k:
            if np.any(np.linalg.norm(features, axis=1) > 1.0 + 1e-9):
                raise ValueError("features must lie in the unit ball")
            if np.any((outcomes != 0.0) & (outcomes != 1.0)):
                raise ValueError("outcomes must be binary")
            need = self._count + k
            if need > self._features.shape[0]:
                cap = max(need, 2 * self._features.shape[0])
                grown_f = np.empty((cap, self.dim))
                grown_f[: self._count] = self.features
                grown_o = np.empty(cap)
                grown_o[: self._count] = self.outcomes
                self._features, self._outcomes = grown_f, grown_o
            self._features[self._count : need] = features
            self._outcomes[self._count : need] = outcomes
            self._count = need
            self.sum_x_phi += outcomes @ features
            self.gram += features.T @ features
            self._pool(features, outcomes)
        self._round_ends.append(self._count)

    def rounds(self):
        """Yield (features, outcomes) per recorded round."""
        start = 0
        for end in self._round_ends:
            yield self._features[start:end], self._outcomes[start:end]
            start = end

    def copy(self):
        other = ObservationLog(self.dim, self.max_per_round)
        other._features = self.features.copy()
        other._outcomes = self.outcomes.copy()
        other._count = self._count
        other._round_ends = list(self._round_ends)
        other.sum_x_phi = self.sum_x_phi.copy()
        other.gram = self.gram.copy()
        other._row_of = dict(self._row_of)
        other._ufeat = self._ufeat.copy()
        other._ucount = self._ucount.copy()
        other._usum = self._usum.copy()
        other._n_unique = self._n_unique
        return other


@dataclass(frozen=True)
class RegularizerSchedule:
    """lambda_t = d log(4 (1 + t K) / delta)."""

    d: int
    K: int
    delta: float

    def __post_init__(self):
        if self.d < 1 or self.K < 1:
            raise ValueError("d and K must be >= 1")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")

    def __call__(self, t):
        return self.d * math.log(4.0 * (1.0 + t * self.K) / self.delta)


@dataclass
class EstimatorState:
    theta_hat: np.ndarray
    lambda_t: float
    covariance_v: np.ndarray
    hessian_at_hat: np.ndarray
    kappa: float


@dataclass
class MleResult:
    theta: np.ndarray
    converged: bool
    n_iter: int
    grad_norm: float
    loss: float = field(default=float("nan"))


def log_loss(theta, log, lambda_t):
    theta = np.asarray(theta, dtype=float)
    reg = 0.5 * lambda_t * float(theta @ theta)
    if len(log) == 0:
        return reg
    z = log.unique_features @ theta
    return float(log.counts @ np.logaddexp(0.0, z) - log.successes @ z) + reg


def g_map(theta, log, lambda_t):
    theta = np.asarray(theta, dtype=float)
    out = lambda_t * theta
    if len(log):
        f = log.unique_features
        out = out + (log.counts * sigmoid(f @ theta)) @ f
    return out


def grad_log_loss(theta, log, lambda_t):
    return g_map(theta, log, lambda_t) - log.sum_x_phi


def hessian(theta, log, lambda_t):
    theta = np.asarray(theta, dtype=float)
    h = lambda_t * np.eye(log.dim)
    if len(log):
        f = log.unique_features
        w = log.counts * sigmoid_deriv(f @ theta)
        h += (f * w[:, None]).T @ f
    return h


def covariance(log, kappa, lambda_t):
    return log.gram + kappa * lambda_t * np.eye(log.dim)


def _loss_and_grad(theta, log, lambda_t):
    reg_g = lambda_t * theta
    reg_f = 0.5 * lambda_t * float(theta @ theta)
    if len(log) == 0:
        return reg_f, reg_g
    f = log.unique_features
    z = f @ theta
    loss = float(log.counts @ np.logaddexp(0.0, z) - log.successes @ z) + reg_f
    grad = (log.counts * sigmoid(z)) @ f - log.sum_x_phi + reg_g
    return loss, grad


def _loss_change(theta, cand, log, lambda_t):
    """loss(cand) - loss(theta), summed term by term.

    Subtracting two large totals loses the small decreases near the optimum,
    so each softplus difference is taken as log1p(sigmoid(z) * expm1(z' - z)).
    """
    diff = cand - theta
    reg = 0.5 * lambda_t * float(diff @ (cand + theta))
    if len(log) == 0:
        return reg
    f = log.unique_features
    z, dz = f @ theta, f @ diff
    with np.errstate(over="ignore", invalid="ignore"):
        soft = np.log1p(sigmoid(z) * np.expm1(dz))
    bad = ~np.isfinite(soft)
    if np.any(bad):
        soft[bad] = np.logaddexp(0.0, z[bad] + dz[bad]) - np.logaddexp(0.0, z[bad])
    return float(log.counts @ soft - log.successes @ dz) + reg


_SHRINK = 0.5
_SLOPE = 1e-4


def _descend(log, lambda_t, tol, max_iter, theta, project, stationarity):
    """Projected gradient descent with Armijo backtracking along the projection arc.

    Each line search starts from a Barzilai-Borwein step capped at 1/lambda_t.
    """
    loss, grad = _loss_and_grad(theta, log, lambda_t)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss at the starting point")
    # Curvature is at least lambda_t, so 1/lambda_t is the longest useful step.
    max_step = 1.0 / lambda_t
    step = max_step
    it = 0
    while it < max_iter:
        gnorm = stationarity(theta, grad)
        if gnorm <= tol:
            return MleResult(theta, True, it, gnorm, loss)
        while True:
            cand = project(theta - step * grad)
            diff = cand - theta
            change = _loss_change(theta, cand, log, lambda_t)
            if not math.isfinite(change):
                raise FloatingPointError("non-finite loss encountered during descent")
            if change <= _SLOPE * float(grad @ diff):
                break
            step *= _SHRINK
            if step < 1e-300:
                diff = np.zeros_like(theta)
                break
        if not np.any(diff):
            break  # no representable progress left
        theta = cand
        loss, new_grad = _loss_and_grad(theta, log, lambda_t)
        # Barzilai-Borwein trial step: inverse curvature along the last move
        sy = float(diff @ (new_grad - grad))
        step = min(float(diff @ diff) / sy, max_step) if sy > 0 else max_step
        grad = new_grad
        it += 1
    gnorm = stationarity(theta, grad)
    converged = gnorm <= tol
    if not converged:
        warnings.warn(
            f"MLE did not reach tol={tol:g} in {it} iterations (residual {gnorm:.3e})",
            ConvergenceWarning,
            stacklevel=3,
        )
    return MleResult(theta, converged, it, gnorm, loss)


def fit_mle(log, lambda_t, tol=1e-6, max_iter=10_000, warm_start=None):
    """Unconstrained minimizer of the regularized log-loss."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if lambda_t <= 0:
        raise ValueError("lambda_t must be positive")
    theta = np.zeros(log.dim) if warm_start is None else np.array(warm_start, dtype=float)
    return _descend(
        log, lambda_t, tol, max_iter, theta,
        project=lambda x: x,
        stationarity=lambda th, g: float(np.linalg.norm(g)),
    )


class Ellipsoid:
    """{x : ||x - center||_shape <= radius} with a cached eigendecomposition."""

    def __init__(self, center, shape, radius):
        self.center = np.asarray(center, dtype=float)
        self.shape = np.asarray(shape, dtype=float)
        self.radius = float(radius)
        if self.radius < 0:
            raise ValueError("radius must be non-negative")
        evals, evecs = np.linalg.eigh(self.shape)
        if evals[0] <= 0:
            raise ValueError("ellipsoid shape must be positive definite")
        self._evals = evals
        self._evecs = evecs

    def __iter__(self):
        return iter((self.center, self.shape, self.radius))

    def distance(self, x):
        """||x - center||_shape."""
        diff = np.asarray(x, dtype=float) - self.center
        return math.sqrt(max(float(diff @ self.shape @ diff), 0.0))

    def contains(self, x, slack=1e-9):
        return self.distance(x) <= self.radius * (1.0 + slack) + slack

    def project(self, point, tol=0.0):
        """Euclidean projection by bisection on the KKT multiplier.

        ``tol`` is the relative bracket width; 0 bisects to full precision.
        """
        point = np.asarray(point, dtype=float)
        if self.radius == 0.0:
            return self.center.copy()
        y = self._evecs.T @ (point - self.center)
        lam = self._evals
        r2 = self.radius ** 2

        def excess(mu):
            return float(np.sum(lam * (y / (1.0 + mu * lam)) ** 2)) - r2

        if excess(0.0) <= 0.0:
            return point.copy()
        lo, hi = 0.0, 1.0 / lam[0]
        while excess(hi) > 0.0:
            lo, hi = hi, 2.0 * hi
        while hi - lo > tol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                break
            if excess(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        # the upper end of the bracket is always feasible
        return self.center + self._evecs @ (y / (1.0 + hi * lam))


def project_to_ellipsoid(point, center, shape, radius):
    return Ellipsoid(center, shape, radius).project(point)


def fit_mle_constrained(log, lambda_t, ellipsoid, tol=1e-6, max_iter=10_000, warm_start=None):
    """Minimize the log-loss over an ellipsoid by projected gradient descent.

    ``ellipsoid`` is an :class:`Ellipsoid` or a (center, shape, radius) triple.
    Stationarity is the unit-step gradient mapping ||theta - P(theta - grad)||.
    """
    if not isinstance(ellipsoid, Ellipsoid):
        ellipsoid = Ellipsoid(*ellipsoid)
    if ellipsoid.radius == 0.0:
        return MleResult(ellipsoid.center.copy(), True, 0, 0.0,
                         log_loss(ellipsoid.center, log, lambda_t))
    if warm_start is None:
        theta = ellipsoid.center.copy()
    else:
        theta = ellipsoid.project(np.asarray(warm_start, dtype=float))
    project = ellipsoid.project

    def stationarity(th, g):
        return float(np.linalg.norm(th - project(th - g)))

    return _descend(log, lambda_t, tol, max_iter, theta, project, stationarity)
