import itertools
import math

import numpy as np
import pytest

from clogb.algorithms import (
    ALGORITHMS,
    PAPER_ALGORITHMS,
    AlgoConfig,
    CLogUCB,
    CUCB,
    EllipticalPotential,
    EpsilonGreedy,
    EVACLogUCB,
    LinearUCB,
    Problem,
    VACLogUCB,
    VALinearUCB,
    burn_in_length,
    burn_in_length_unclamped,
    make_policy,
    play_round,
    resolve_kappa,
)
from clogb.confidence import RadiusParams, bonus_adaptive
from clogb.environments import CascadingEnv, InstanceSpec, sample_outcomes, synth_instance
from clogb.numeric_core import PsdFactor, sigmoid


def setup(seed=0, d=2, m=5, K=2, T=200, L=1.0):
    truth, env = synth_instance(seed, InstanceSpec(variant="cascading", d=d, m=m, K=K, L=L))
    problem = Problem(d=d, T=T, L=L, kappa_exact=truth.kappa_exact())
    return truth, env, problem


def simulate(policy, truth, env, rounds, seed=0):
    rng = np.random.default_rng(seed)
    actions = []
    for t in range(1, rounds + 1):
        feats = truth.features(t)
        action, _ = play_round(policy, t, feats, env, sample_outcomes(truth, feats, rng))
        actions.append(action)
    return actions


def newton_mle(feats, xs, lam, iters=100):
    """Reference regularized logistic MLE by plain Newton iterations."""
    theta = np.zeros(feats.shape[1])
    for _ in range(iters):
        p = sigmoid(feats @ theta)
        g = feats.T @ (p - xs) + lam * theta
        h = (feats * (p * (1 - p))[:, None]).T @ feats + lam * np.eye(len(theta))
        theta = theta - np.linalg.solve(h, g)
    return theta


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"delta": 0.0}, {"kappa_mode": "x"}, {"projection_mode": "x"},
        {"agnostic_bonus_scale": 0.5}, {"radius_scale": -1.0}, {"epsilon": 1.5},
        {"t0_scale": 0.0}, {"ridge_lambda": 0.0}, {"variance_floor": 0.3},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            AlgoConfig(**kw)

    def test_defaults(self):
        cfg = AlgoConfig()
        assert cfg.epsilon == 0.2 and cfg.projection_mode == "skip"
        assert cfg.agnostic_bonus_scale == 0.25 and cfg.t0_scale == 0.02

    def test_kappa_modes(self):
        p = Problem(d=2, T=10, L=1.0, kappa_exact=5.0)
        assert resolve_kappa(p, AlgoConfig()) == 5.0
        assert resolve_kappa(p, AlgoConfig(kappa_mode="bound")) == pytest.approx(4 * math.e)

    def test_unknown_algorithm(self):
        _, env, problem = setup()
        with pytest.raises(ValueError):
            make_policy("nope", env, problem)

    def test_registry(self):
        assert set(PAPER_ALGORITHMS) <= set(ALGORITHMS)
        assert len(ALGORITHMS) == 7


class TestCLogUCB:
    def test_round_one_state(self):
        truth, env, problem = setup()
        pol = CLogUCB(env, problem)
        pol.select(1, truth.features(1))
        np.testing.assert_array_equal(pol.theta_hat, 0.0)
        np.testing.assert_array_equal(pol.ucbs.mean_estimate, 0.5)
        lam = pol.schedule(1)
        np.testing.assert_allclose(pol.estimator.covariance_v, pol.kappa * lam * np.eye(2))
        norms = np.linalg.norm(truth.features(1), axis=1)
        expected = 0.25 * pol.radius * norms / math.sqrt(pol.kappa * lam)
        np.testing.assert_allclose(pol.ucbs.bonus, expected, rtol=1e-12)
        np.testing.assert_allclose(pol.ucbs.ucb, np.clip(0.5 + expected, 0, 1))

    def test_identical_arms_tie(self):
        env = CascadingEnv(4, 1)
        feats = np.array([[0.3, 0.1], [0.3, 0.1], [0.1, 0.0], [0.0, 0.1]])
        pol = CLogUCB(env, Problem(d=2, T=100), AlgoConfig(radius_scale=0.001))
        action = pol.select(1, feats)
        assert pol.ucbs.ucb[0] == pol.ucbs.ucb[1]
        assert action == (0,)

    def test_round_two_matches_reimplementation(self):
        truth, env, problem = setup(seed=4, d=2, m=5, K=2, T=2000)
        cfg = AlgoConfig(mle_tol=1e-12)
        pol = CLogUCB(env, problem, cfg)
        feats = truth.features(1)
        action = pol.select(1, feats)
        outcomes = np.array([1, 0, 1, 1, 0])
        fb = env.trigger_and_observe(action, outcomes)
        pol.update(1, feats, action, fb)
        pol.select(2, feats)

        # straight-line version of the round-2 computation
        d, K, T = 2, 2, 2000
        delta = 1.0 / T
        lam = d * math.log(4 * (1 + 2 * K) / delta)
        obs_f = feats[list(fb.triggered)]
        theta = newton_mle(obs_f, np.asarray(fb.outcomes, float), lam)
        kappa = max(4.0, truth.kappa_exact())
        v = obs_f.T @ obs_f + kappa * lam * np.eye(d)
        beta = (1 + 4 + 4.75) * math.sqrt(kappa * lam)
        vinv = np.linalg.inv(v)
        width = np.sqrt(np.einsum("ij,jk,ik->i", feats, vinv, feats))
        raw = sigmoid(feats @ theta) + 0.25 * beta * width
        np.testing.assert_allclose(pol.ucbs.raw, raw, rtol=0, atol=1e-9)
        np.testing.assert_allclose(pol.ucbs.ucb, np.clip(raw, 0, 1), atol=1e-9)

    def test_zero_radius_is_greedy_plugin(self):
        truth, env, problem = setup(seed=2, d=3, m=8, K=3, T=60)
        pol = CLogUCB(env, problem, AlgoConfig(radius_scale=0.0))
        rng = np.random.default_rng(0)
        for t in range(1, 61):
            feats = truth.features(t)
            action = pol.select(t, feats)
            assert action == env.oracle(sigmoid(feats @ pol.theta_hat)).action
            pol.update(t, feats, action, env.trigger_and_observe(action, sample_outcomes(truth, feats, rng)))

    @pytest.mark.parametrize("name", sorted(ALGORITHMS))
    def test_replay_determinism(self, name):
        truth, env, problem = setup(seed=5, d=3, m=6, K=2, T=40)
        runs = []
        for _ in range(2):
            pol = make_policy(name, env, problem, rng=np.random.default_rng(9))
            runs.append(simulate(pol, truth, env, 40, seed=3))
        assert runs[0] == runs[1]


class TestEllipticalPotential:
    @pytest.mark.parametrize("name", PAPER_ALGORITHMS)
    def test_no_violations(self, name):
        truth, env, problem = setup(seed=1, d=3, m=8, K=3, T=80)
        pol = make_policy(name, env, problem)
        simulate(pol, truth, env, 80)
        assert pol.potential.active
        assert pol.potential.checks == 80
        assert pol.potential.violations == 0

    def test_skipped_when_lambda_small(self):
        pot = EllipticalPotential(2, 1.0, 5)
        pot.add(1, PsdFactor(np.eye(2)), np.ones((1, 2)) * 10, 1.0)
        assert not pot.active and pot.violations == 0 and pot.total == pytest.approx(200.0)

    def test_counts_violation(self):
        pot = EllipticalPotential(1, 10.0, 1)
        pot.add(1, PsdFactor(np.eye(1) * 1e-3), np.ones((1, 1)), 10.0)
        assert pot.violations == 1


class TestVACLogUCB:
    def test_round_one_bonus_is_isotropic_closed_form(self):
        truth, env, problem = setup(seed=3)
        pol = VACLogUCB(env, problem)
        feats = truth.features(1)
        pol.select(1, feats)
        assert len(pol.region) == 0
        lam = pol.schedule(1)
        norms = np.linalg.norm(feats, axis=1)
        sigma = pol.radius
        expected = sigma * 0.25 * norms / math.sqrt(lam) + pol.kappa * sigma ** 2 / 8 * norms ** 2 / (pol.kappa * lam)
        np.testing.assert_allclose(pol.ucbs.bonus, expected, rtol=1e-12)
        ref = bonus_adaptive(feats, np.zeros(2), lam * np.eye(2), pol.kappa * lam * np.eye(2), sigma, pol.kappa)
        np.testing.assert_allclose(pol.ucbs.bonus, ref, rtol=1e-12)

    def test_skip_equals_heuristic_when_projection_idle(self):
        truth, env, problem = setup(seed=6, d=2, m=5, K=2, T=50)
        skip = VACLogUCB(env, problem, AlgoConfig(projection_mode="skip"))
        heur = VACLogUCB(env, problem, AlgoConfig(projection_mode="heuristic"))
        a = simulate(skip, truth, env, 50)
        b = simulate(heur, truth, env, 50)
        assert heur.projections == 0
        assert a == b

    def test_region_grows_with_feedback(self):
        truth, env, problem = setup(seed=6)
        pol = VACLogUCB(env, problem)
        simulate(pol, truth, env, 5)
        assert len(pol.region) >= 5


class TestEVACLogUCB:
    def test_burn_in_length_example(self):
        p = RadiusParams(L=1.0, d=1, K=1, delta=0.1, kappa=4.0)
        raw = burn_in_length_unclamped(p, 10, 1.0)
        assert raw == pytest.approx(39 ** 2 * 4 * math.log(480) ** 2, rel=1e-12)
        assert raw == pytest.approx(2.32e5, rel=0.01)
        assert burn_in_length(p, 10, 1.0) == 5

    def test_burn_in_length_structure(self):
        base = RadiusParams(L=1.0, d=2, K=1, delta=0.1, kappa=4.0)
        big_k = RadiusParams(L=1.0, d=2, K=1, delta=0.1, kappa=8.0)
        big_d = RadiusParams(L=1.0, d=4, K=1, delta=0.1, kappa=4.0)
        u = burn_in_length_unclamped
        assert u(big_k, 10) == pytest.approx(2 * u(base, 10))
        assert u(big_d, 10) == pytest.approx(4 * u(base, 10))
        assert u(base, 10, 0.5) == pytest.approx(0.5 * u(base, 10, 1.0))
        assert burn_in_length(base, 1, 1.0) == 1
        with pytest.raises(ValueError):
            burn_in_length(base, 10, 0.0)

    def test_first_burn_in_arm_has_largest_norm(self):
        env = CascadingEnv(4, 2)
        feats = np.array([[0.1, 0.0], [0.5, 0.5], [0.0, 0.5], [0.5, -0.5]])
        pol = EVACLogUCB(env, Problem(d=2, T=100))
        action = pol.select(1, feats)
        assert pol.burn_in_arms == [1] and action[0] == 1

    def test_phase_transition_and_containment(self):
        truth, env, problem = setup(seed=7, d=2, m=6, K=2, T=100)
        pol = EVACLogUCB(env, problem, AlgoConfig(t0_scale=1e-4))
        t0 = pol.t0
        assert 1 <= t0 <= 50
        rng = np.random.default_rng(0)
        for t in range(1, 101):
            feats = truth.features(t)
            action = pol.select(t, feats)
            if t <= t0:
                assert pol.phase == "burn_in" and pol.burn_in_arms[-1] in action
            else:
                assert pol.phase == "learning"
                assert pol.region.contains(pol.theta_hat)
            fb = env.trigger_and_observe(action, sample_outcomes(truth, feats, rng))
            pol.update(t, feats, action, fb)
            if t == t0:
                assert pol.region is None
                assert pol.obs.n_rounds == t0
        assert len(pol.burn_in_arms) == t0

    def test_burn_in_logs_only_designated_arm(self):
        truth, env, problem = setup(seed=8, d=2, m=5, K=3, T=100)
        pol = EVACLogUCB(env, problem, AlgoConfig(t0_scale=1e-4))
        feats = truth.features(1)
        action = pol.select(1, feats)
        fb = env.trigger_and_observe(action, np.zeros(5, dtype=int))
        assert len(fb.triggered) == 3
        pol.update(1, feats, action, fb)
        assert len(pol.obs) == 1

    def test_requires_static_features(self):
        _, env, _ = setup()
        with pytest.raises(ValueError):
            EVACLogUCB(env, Problem(d=2, T=10, static_features=False))


class TestBaselines:
    def test_cucb_round_one(self):
        _, env, problem = setup(m=5, K=3)
        pol = CUCB(env, problem)
        assert pol.select(1, None) == (0, 1, 2)

    def test_cucb_index(self):
        env = CascadingEnv(3, 1)
        pol = CUCB(env, Problem(d=1, T=10))
        fb = env.trigger_and_observe((0,), np.array([1, 0, 0]))
        pol.update(1, None, (0,), fb)
        assert pol.counts.tolist() == [1, 0, 0] and pol.sums.tolist() == [1, 0, 0]
        assert pol.select(2, None) == (0,)

    def test_epsilon_zero_exploits(self):
        env = CascadingEnv(4, 1)
        pol = EpsilonGreedy(env, Problem(d=1, T=10), AlgoConfig(epsilon=0.0))
        pol.counts[:] = 1
        pol.sums[:] = [0.2, 0.9, 0.4, 0.1]
        for t in range(20):
            assert pol.select(t + 1, None) == (1,)

    def test_epsilon_one_is_uniform(self):
        env = CascadingEnv(4, 2)
        mu = np.array([0.2, 0.5, 0.7, 0.4])
        pol = EpsilonGreedy(env, Problem(d=1, T=10), AlgoConfig(epsilon=1.0), np.random.default_rng(0))
        # cascading actions are ordered lists
        actions = list(itertools.permutations(range(4), 2))
        expected = np.mean([env.triggering_probs(a, mu) for a in actions], axis=0)
        rng = np.random.default_rng(1)
        n = 20_000
        hits = np.zeros(4)
        for _ in range(n):
            fb = env.trigger_and_observe(pol.select(1, None), (rng.random(4) < mu).astype(int))
            hits[list(fb.triggered)] += 1
        assert np.all(np.abs(hits / n - expected) <= 4 * np.sqrt(0.25 / n))

    def test_linucb_round_one(self):
        truth, env, problem = setup(m=5, K=2)
        pol = LinearUCB(env, problem)
        feats = truth.features(1)
        pol.select(1, feats)
        np.testing.assert_array_equal(pol.theta_hat, 0.0)

    def test_linucb_ridge_update(self):
        env = CascadingEnv(2, 2)
        pol = LinearUCB(env, Problem(d=2, T=10))
        feats = np.array([[0.6, 0.0], [0.0, 0.8]])
        action = pol.select(1, feats)
        fb = env.trigger_and_observe(action, np.array([0, 1]))
        pol.update(1, feats, action, fb)
        np.testing.assert_allclose(pol.v, np.eye(2) + feats.T @ feats)
        np.testing.assert_allclose(pol.b, feats[1])

    def test_va_linucb_weights(self):
        env = CascadingEnv(2, 1)
        pol = VALinearUCB(env, Problem(d=1, T=10))
        pol.theta_hat = np.array([0.5])
        w = pol._weights(np.array([[1.0], [0.0]]))
        np.testing.assert_allclose(w, [4.0, 20.0])
