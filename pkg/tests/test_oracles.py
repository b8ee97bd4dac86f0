import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clogb.environments import CascadingEnv, MatchingEnv, PmcEnv, RoutingEnv
from clogb.oracle_checks import CHECKS, random_dag, random_pmc, run_all
from clogb.oracles import (
    OracleError,
    brute_force_oracle,
    dijkstra_route,
    greedy_pmc,
    hungarian,
    topk_oracle,
)

ALPHA_PMC = 1.0 - 1.0 / math.e


def enumerate_paths(n_nodes, edges, src, dst):
    """Every simple source-to-dest path as a tuple of edge indices."""
    out = []

    def walk(node, path, seen):
        if node == dst:
            out.append(tuple(path))
            return
        for e, (a, b) in enumerate(edges):
            if a == node and b not in seen:
                walk(b, path + [e], seen | {b})

    walk(src, [], {src})
    return out


def pmc_value(env, servers, mu):
    """Expected coverage written out per user, independent of the environment code."""
    total = 0.0
    for v in range(env.n_users):
        miss = 1.0
        for e, (u, w) in enumerate(env.edges):
            if w == v and u in servers:
                miss *= 1.0 - mu[e]
        user_mu = mu[env.n_edges + v] if env.user_triggering else 1.0
        total += (1.0 - miss) * user_mu
    return total


class TestTopK:
    def test_example(self):
        res = topk_oracle(np.array([0.1, 0.9, 0.5]), 2)
        assert set(res.action) == {1, 2}
        assert res.value == pytest.approx(1 - 0.1 * 0.5)
        assert res.alpha == 1.0

    def test_ties_take_first(self):
        assert topk_oracle(np.full(6, 0.3), 3).action == (0, 1, 2)

    def test_bad_k(self):
        with pytest.raises(OracleError):
            topk_oracle(np.ones(3), 4)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_subset_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(2, 9))
        K = int(rng.integers(1, m + 1))
        mu = rng.random(m)
        best = max(1 - np.prod(1 - mu[list(s)]) for s in itertools.combinations(range(m), K))
        res = topk_oracle(mu, K)
        assert res.value == pytest.approx(best, abs=1e-12)
        assert brute_force_oracle(CascadingEnv(m, K), mu).value == pytest.approx(best, abs=1e-12)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.integers(1, 10))
    def test_deterministic_and_consistent(self, mu, K):
        mu = np.array(mu)
        K = min(K, len(mu))
        a, b = topk_oracle(mu, K), topk_oracle(mu.copy(), K)
        assert a == b
        assert a.value == pytest.approx(CascadingEnv(len(mu), K).expected_reward(a.action, mu), abs=1e-12)


class TestGreedyPmc:
    def test_single_server(self):
        env = PmcEnv(1, 2, [(0, 0), (0, 1)], 1)
        mu = np.array([0.5, 0.4, 0.9, 0.8])
        res = greedy_pmc(mu, env, 1)
        assert res.action == (0,)
        assert res.value == pytest.approx(brute_force_oracle(env, mu).value)
        assert res.alpha == pytest.approx(ALPHA_PMC)

    def test_full_budget(self):
        env = PmcEnv(3, 2, [(0, 0), (1, 1), (2, 0)], 3)
        assert greedy_pmc(np.full(env.m, 0.5), env, 3).action == (0, 1, 2)

    def test_bad_budget(self):
        env = PmcEnv(2, 1, [(0, 0), (1, 0)], 1)
        with pytest.raises(OracleError):
            greedy_pmc(np.ones(env.m), env, 3)

    def test_alpha_contract_against_enumeration(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            env = random_pmc(rng)
            mu = rng.random(env.m)
            opt = max(pmc_value(env, set(s), mu)
                      for s in itertools.combinations(range(env.n_servers), env.budget))
            res = greedy_pmc(mu, env, env.budget)
            assert res.value >= ALPHA_PMC * opt - 1e-12
            assert res.value == pytest.approx(pmc_value(env, set(res.action), mu), abs=1e-12)

    def test_lazy_matches_plain(self):
        rng = np.random.default_rng(32)
        for _ in range(50):
            env = random_pmc(rng)
            mu = rng.random(env.m)
            assert greedy_pmc(mu, env, env.budget, lazy=True) == greedy_pmc(mu, env, env.budget)


class TestHungarian:
    def test_example(self):
        res = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert res.action == ((0, 1), (1, 0))
        assert res.value == 4.0

    def test_diagonal(self):
        w = np.eye(4) * 10 + 1
        assert hungarian(w).action == tuple((i, i) for i in range(4))

    def test_sentinel_row_is_error(self):
        w = np.array([[1.0, 2.0], [-np.inf, -np.inf]])
        with pytest.raises(OracleError):
            hungarian(w)

    def test_no_perfect_matching(self):
        w = np.array([[1.0, -np.inf], [2.0, -np.inf]])
        with pytest.raises(OracleError):
            hungarian(w)

    def test_more_rows_than_columns(self):
        with pytest.raises(OracleError):
            hungarian(np.ones((3, 2)))

    def test_matches_permutation_enumeration(self):
        rng = np.random.default_rng(41)
        for _ in range(100):
            cols = int(rng.integers(1, 7))
            rows = int(rng.integers(1, cols + 1))
            w = rng.normal(size=(rows, cols))
            best = max(sum(w[r, c] for r, c in enumerate(p))
                       for p in itertools.permutations(range(cols), rows))
            assert hungarian(w).value == pytest.approx(best, abs=1e-12)

    def test_matching_env_value_is_expected_reward(self):
        env = MatchingEnv(2, 3, [(0, 0), (0, 1), (1, 1), (1, 2)])
        mu = np.array([0.2, 0.9, 0.8, 0.1])
        res = env.oracle(mu)
        assert res.value == pytest.approx(env.expected_reward(res.action, mu), abs=1e-12)
        assert res.value == pytest.approx(0.2 + 0.8)


class TestDijkstra:
    def test_single_path(self):
        env = RoutingEnv(3, [(0, 1), (1, 2)], 0, 2)
        res = dijkstra_route(np.array([0.3, 0.4]), env)
        assert res.action == (0, 1) and res.value == pytest.approx(0.12)

    def test_parallel_paths(self):
        env = RoutingEnv(4, [(0, 1), (1, 3), (0, 2), (2, 3)], 0, 3)
        res = dijkstra_route(np.array([0.9, 0.9, 0.8, 0.8]), env)
        assert res.action == (0, 1) and res.value == pytest.approx(0.81)

    def test_zero_edges_skipped(self):
        env = RoutingEnv(4, [(0, 1), (1, 3), (0, 2), (2, 3)], 0, 3)
        assert dijkstra_route(np.array([0.9, 0.0, 0.2, 0.2]), env).action == (2, 3)
        with pytest.raises(OracleError):
            dijkstra_route(np.array([0.9, 0.0, 0.0, 0.2]), env)

    def test_matches_path_enumeration(self):
        rng = np.random.default_rng(51)
        done = 0
        while done < 100:
            n = int(rng.integers(2, 8))
            edges = random_dag(rng, n)
            paths = enumerate_paths(n, edges, 0, n - 1)
            if not paths:
                continue
            env = RoutingEnv(n, edges, 0, n - 1)
            mu = rng.uniform(0.01, 1.0, len(edges))
            best = max(float(np.prod(mu[list(p)])) for p in paths)
            res = dijkstra_route(mu, env)
            assert res.value == pytest.approx(best, rel=1e-12)
            assert brute_force_oracle(env, mu).value == pytest.approx(best, rel=1e-12)
            done += 1


class TestBruteForce:
    def test_single_action(self):
        env = RoutingEnv(2, [(0, 1)], 0, 1)
        assert brute_force_oracle(env, np.array([0.4])).action == (0,)

    def test_lexicographic_tie(self):
        env = MatchingEnv(2, 2, [(0, 0), (0, 1), (1, 0), (1, 1)])
        assert brute_force_oracle(env, np.full(4, 0.5)).action == (0, 3)

    def test_agrees_with_dijkstra(self):
        env = RoutingEnv(5, [(0, 1), (1, 4), (0, 2), (2, 3), (3, 4), (1, 3)], 0, 4)
        rng = np.random.default_rng(61)
        for _ in range(20):
            mu = rng.random(env.m)
            assert brute_force_oracle(env, mu).action == dijkstra_route(mu, env).action

    def test_too_large(self):
        with pytest.raises(OracleError):
            brute_force_oracle(CascadingEnv(200, 5), np.zeros(200))


class TestCrossCheckCorpus:
    @pytest.mark.parametrize("name", [n for n, _ in CHECKS])
    def test_check_passes(self, name):
        passed, detail = dict(CHECKS)[name]()
        assert passed, detail

    def test_run_all_reports_each(self):
        assert [n for n, _, _ in run_all()] == [n for n, _ in CHECKS]
