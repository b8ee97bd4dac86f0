"""Seeded cross-check corpus: every oracle against exhaustive search."""

import itertools
import math

import numpy as np

from clogb.environments import CascadingEnv, MatchingEnv, PmcEnv, RoutingEnv
from clogb.oracles import OracleError, brute_force_oracle, dijkstra_route, greedy_pmc, hungarian, topk_oracle

TOL = 1e-12


def check_topk(n=100, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        m = int(rng.integers(1, 9))
        K = int(rng.integers(1, m + 1))
        mu = rng.random(m)
        env = CascadingEnv(m, K)
        fast, slow = topk_oracle(mu, K), brute_force_oracle(env, mu)
        if set(fast.action) != set(slow.action) or abs(fast.value - slow.value) > TOL:
            return False, f"mismatch at m={m}, K={K}: {fast.action} vs {slow.action}"
    return True, f"{n} instances, m <= 8"


def assignment_optimum(w):
    """Best total weight over all injective row -> column maps (None if none is allowed)."""
    best = -math.inf
    rows, cols = w.shape
    for perm in itertools.permutations(range(cols), rows):
        val = sum(w[r, c] for r, c in enumerate(perm))
        if val > best:
            best = val
    return best


def check_hungarian(n=100, seed=1):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        cols = int(rng.integers(1, 7))
        rows = int(rng.integers(1, cols + 1))
        w = rng.random((rows, cols))
        w[rng.random((rows, cols)) < 0.2] = -np.inf
        best = assignment_optimum(w)
        try:
            res = hungarian(w)
        except OracleError:
            if math.isfinite(best):
                return False, f"reported infeasible but optimum {best} exists"
            continue
        if not math.isfinite(best) or abs(res.value - best) > TOL:
            return False, f"value {res.value} vs enumeration {best}"
    return True, f"{n} instances, |V| <= 6"


def random_dag(rng, n_nodes, p=0.5):
    return [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if rng.random() < p]


def check_dijkstra(n=100, seed=2):
    rng = np.random.default_rng(seed)
    done = 0
    while done < n:
        n_nodes = int(rng.integers(2, 8))
        edges = random_dag(rng, n_nodes)
        try:
            env = RoutingEnv(n_nodes, edges, 0, n_nodes - 1)
        except ValueError:
            continue  # destination unreachable; draw another graph
        mu = rng.random(env.m)
        fast, slow = dijkstra_route(mu, env), brute_force_oracle(env, mu)
        if fast.action != slow.action or abs(fast.value - slow.value) > TOL:
            return False, f"path {fast.action} vs {slow.action}"
        done += 1
    return True, f"{n} random DAGs, <= 7 nodes"


def random_pmc(rng):
    n_servers = int(rng.integers(1, 7))
    n_users = int(rng.integers(1, 6))
    edges = [(u, v) for u in range(n_servers) for v in range(n_users) if rng.random() < 0.5]
    if not edges:
        edges = [(0, 0)]
    k = int(rng.integers(1, min(3, n_servers) + 1))
    return PmcEnv(n_servers, n_users, edges, k, user_triggering=bool(rng.random() < 0.5))


def check_greedy_pmc(n=100, seed=3):
    rng = np.random.default_rng(seed)
    alpha = 1.0 - 1.0 / math.e
    for _ in range(n):
        env = random_pmc(rng)
        mu = rng.random(env.m)
        res, opt = greedy_pmc(mu, env, env.budget), brute_force_oracle(env, mu)
        if res.value < alpha * opt.value - TOL:
            return False, f"greedy {res.value} < alpha * {opt.value}"
    return True, f"{n} instances, |U| <= 6, |V| <= 5, k <= 3"


def check_matching_env(n=100, seed=4):
    """The matching environment's oracle agrees with its own exhaustive search."""
    rng = np.random.default_rng(seed)
    for _ in range(n):
        n_ch = int(rng.integers(1, 6))
        n_us = int(rng.integers(1, n_ch + 1))
        pairs = sorted({(u, u) for u in range(n_us)}
                       | {(u, v) for u in range(n_us) for v in range(n_ch) if rng.random() < 0.5})
        env = MatchingEnv(n_us, n_ch, pairs)
        mu = rng.random(env.m)
        fast, slow = env.oracle(mu), brute_force_oracle(env, mu)
        if abs(fast.value - slow.value) > TOL:
            return False, f"value {fast.value} vs {slow.value}"
    return True, f"{n} instances"


CHECKS = (
    ("topk", check_topk),
    ("hungarian", check_hungarian),
    ("dijkstra", check_dijkstra),
    ("greedy_pmc", check_greedy_pmc),
    ("matching_env", check_matching_env),
)


def run_all():
    for name, fn in CHECKS:
        passed, detail = fn()
        yield name, passed, detail
