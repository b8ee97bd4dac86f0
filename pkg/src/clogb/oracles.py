"""Offline solvers mapping a mean vector to a (near-)optimal action."""

import heapq
import math
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

BRUTE_FORCE_LIMIT = 1_000_000


class OracleError(ValueError):
    pass


class OracleResult(NamedTuple):
    action: tuple
    value: float
    alpha: float


def _cascading_value(mu, action):
    return 1.0 - float(np.prod(1.0 - np.asarray(mu, dtype=float)[list(action)]))


def topk_oracle(mu, K):
    """The K largest means in decreasing order, ties to the lower index."""
    mu = np.asarray(mu, dtype=float)
    if not 1 <= K <= mu.shape[0]:
        raise OracleError(f"K={K} out of range for {mu.shape[0]} arms")
    order = np.lexsort((np.arange(mu.shape[0]), -mu))[:K]
    action = tuple(int(i) for i in order)
    return OracleResult(action, _cascading_value(mu, action), 1.0)


def greedy_pmc(mu, env, k, lazy=False):
    """Greedy server selection by marginal expected coverage gain.

    ``lazy`` enables the usual priority-queue shortcut for submodular gains;
    the plain loop is the default.
    """
    mu = np.asarray(mu, dtype=float)
    if not 1 <= k <= env.n_servers:
        raise OracleError(f"budget {k} out of range for {env.n_servers} servers")
    user_mu = mu[env.n_edges:] if env.user_triggering else np.ones(env.n_users)
    miss = np.ones(env.n_users)

    def gain(u):
        m = miss.copy()
        for e in env.server_edges[u]:
            m[env.edge_user[e]] *= 1.0 - mu[e]
        return float((miss - m) @ user_mu), m

    chosen = []
    if lazy:
        heap = [(-gain(u)[0], u) for u in range(env.n_servers)]
        heapq.heapify(heap)
        while len(chosen) < k:
            _, u = heapq.heappop(heap)
            g, m = gain(u)
            if not heap or (-g, u) <= heap[0]:
                chosen.append(u)
                miss = m
            else:
                heapq.heappush(heap, (-g, u))
    else:
        remaining = list(range(env.n_servers))
        while len(chosen) < k:
            best_u, best_g, best_m = None, -math.inf, None
            for u in remaining:
                g, m = gain(u)
                if g > best_g:
                    best_u, best_g, best_m = u, g, m
            chosen.append(best_u)
            remaining.remove(best_u)
            miss = best_m
    action = tuple(sorted(chosen))
    return OracleResult(action, env.expected_reward(action, mu), 1.0 - 1.0 / math.e)


def hungarian(weights):
    """Maximum-weight matching of every row into a distinct column.

    ``-inf`` marks a disallowed pair.  The action is a tuple of (row, col).
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] > w.shape[1]:
        raise OracleError("need a rows <= cols weight matrix")
    if np.any(np.isnan(w)) or np.any(w == np.inf):
        raise OracleError("weights must be finite or -inf")
    allowed = np.isfinite(w)
    if np.any(~allowed.any(axis=1)):
        raise OracleError("a row has no allowed column; no perfect matching exists")
    cost = np.where(allowed, -w, np.inf)
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError as exc:
        raise OracleError(f"no perfect matching exists: {exc}") from exc
    action = tuple((int(r), int(c)) for r, c in zip(rows, cols))
    return OracleResult(action, float(sum(w[r, c] for r, c in action)), 1.0)


def dijkstra_route(mu, env):
    """Most reliable path: shortest path under edge weights -log(mu)."""
    mu = np.asarray(mu, dtype=float)
    dist = [math.inf] * env.n_nodes
    via = [None] * env.n_nodes
    dist[env.source] = 0.0
    heap = [(0.0, env.source)]
    done = [False] * env.n_nodes
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == env.dest:
            break
        for e in env.out_edges[u]:
            if mu[e] <= 0.0:
                continue
            v = env.edges[e][1]
            nd = du - math.log(min(mu[e], 1.0))
            if nd < dist[v] and not done[v]:
                dist[v] = nd
                via[v] = e
                heapq.heappush(heap, (nd, v))
    if not math.isfinite(dist[env.dest]):
        raise OracleError("destination unreachable through positive-probability edges")
    path = []
    node = env.dest
    while node != env.source:
        e = via[node]
        path.append(e)
        node = env.edges[e][0]
    action = tuple(reversed(path))
    return OracleResult(action, env.expected_reward(action, mu), 1.0)


def brute_force_oracle(env, mu):
    """Exhaustive argmax of the expected reward; ties to the lexicographically smallest action."""
    mu = np.asarray(mu, dtype=float)
    if env.feasible_action_count() > BRUTE_FORCE_LIMIT:
        raise OracleError("too many feasible actions for exhaustive search")
    if env.variant == "cascading":
        combos = env.combos_array()
        values = 1.0 - np.prod(1.0 - mu[combos], axis=1)
        i = int(np.argmax(values))
        return OracleResult(tuple(int(a) for a in combos[i]), float(values[i]), 1.0)
    best, best_val = None, -math.inf
    for action in env.feasible_actions():
        val = env.expected_reward(action, mu)
        if val > best_val:
            best, best_val = action, val
    if best is None:
        raise OracleError("no feasible action")
    return OracleResult(tuple(best), best_val, 1.0)
