"""The four application environments and synthetic instance generation.

Arms are integer indices into the feature map.  Actions are tuples of ints:

* cascading -- an ordered list of ``K`` distinct items;
* pmc       -- a sorted tuple of selected servers (arms are edges, then user nodes);
* matching  -- a sorted tuple of pair (arm) indices matching every user;
* routing   -- edge indices in path order from source to destination.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from clogb.numeric_core import sigmoid, sigmoid_deriv


class InfeasibleActionError(ValueError):
    pass


@dataclass
class Feedback:
    triggered: tuple
    outcomes: np.ndarray
    realized_reward: float


# (B_v, B_1, lambda) smoothness coefficients per application.
TPVM_COEFFICIENTS = {
    "cascading": (1.0, 1.0, 1.0),
    "routing": (1.0, 1.0, 1.0),
    "matching": (None, 1.0, None),
}


def pmc_tpvm_coefficients(n_users):
    return (3.0 * math.sqrt(2.0 * n_users), 1.0, 2.0)


class Environment:
    """Common interface; subclasses define triggering and rewards."""

    variant = None
    alpha = 1.0

    m: int
    K: int

    def validate(self, action):
        raise NotImplementedError

    def trigger_and_observe(self, action, outcomes):
        raise NotImplementedError

    def expected_reward(self, action, mu):
        raise NotImplementedError

    def triggering_probs(self, action, mu):
        """Vector of triggering probabilities for every arm."""
        raise NotImplementedError

    def triggering_prob(self, arm, action, mu):
        return float(self.triggering_probs(action, mu)[arm])

    def feasible_actions(self):
        """All feasible actions in lexicographic order."""
        raise NotImplementedError

    def feasible_action_count(self):
        raise NotImplementedError

    def oracle(self, mu):
        raise NotImplementedError

    def random_action(self, rng):
        actions = self._action_list()
        return actions[int(rng.integers(len(actions)))]

    def burn_in_action(self, arm, scores):
        """A feasible action that surely triggers ``arm``, filled by ``scores``."""
        best, best_val = None, -math.inf
        ones = np.ones(self.m)
        for action in self.feasible_actions():
            if self.triggering_probs(action, ones)[arm] <= 0.0:
                continue
            val = float(np.sum(scores[list(self.arms_of(action))]))
            if val > best_val:
                best, best_val = action, val
        if best is None:
            raise InfeasibleActionError(f"no feasible action can trigger arm {arm}")
        return best

    def arms_of(self, action):
        """Base arms that the action may trigger."""
        return tuple(action)

    def _action_list(self):
        if getattr(self, "_actions_cache", None) is None:
            if self.feasible_action_count() > 200_000:
                raise ValueError("too many feasible actions to enumerate")
            self._actions_cache = list(self.feasible_actions())
        return self._actions_cache

    def _check_mu(self, mu):
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.m,):
            raise ValueError(f"expected {self.m} means, got shape {mu.shape}")
        return mu


class CascadingEnv(Environment):
    variant = "cascading"

    def __init__(self, m, K):
        if not 1 <= K <= m:
            raise ValueError("need 1 <= K <= m")
        self.m, self.K = int(m), int(K)
        self._combos = None

    def validate(self, action):
        action = tuple(int(a) for a in action)
        if len(action) != self.K or len(set(action)) != self.K:
            raise InfeasibleActionError(f"cascading action must list {self.K} distinct items: {action}")
        if min(action) < 0 or max(action) >= self.m:
            raise InfeasibleActionError(f"item index out of range in {action}")
        return action

    def trigger_and_observe(self, action, outcomes):
        action = self.validate(action)
        triggered = []
        for arm in action:
            triggered.append(arm)
            if outcomes[arm] == 1:
                break
        obs = np.asarray([outcomes[a] for a in triggered], dtype=float)
        return Feedback(tuple(triggered), obs, float(obs[-1] == 1.0))

    def expected_reward(self, action, mu):
        mu = self._check_mu(mu)
        action = self.validate(action)
        return 1.0 - float(np.prod(1.0 - mu[list(action)]))

    def triggering_probs(self, action, mu):
        mu = self._check_mu(mu)
        action = self.validate(action)
        p = np.zeros(self.m)
        survive = 1.0
        for arm in action:
            p[arm] = survive
            survive *= 1.0 - mu[arm]
        return p

    def feasible_actions(self):
        return itertools.combinations(range(self.m), self.K)

    def feasible_action_count(self):
        return math.comb(self.m, self.K)

    def oracle(self, mu):
        from clogb.oracles import topk_oracle
        return topk_oracle(mu, self.K)

    def random_action(self, rng):
        return tuple(int(a) for a in rng.permutation(self.m)[: self.K])

    def burn_in_action(self, arm, scores):
        # the designated arm goes first so it is always examined
        order = np.lexsort((np.arange(self.m), -np.asarray(scores, dtype=float)))
        rest = [int(a) for a in order if a != arm][: self.K - 1]
        return (int(arm), *rest)

    def combos_array(self):
        if self._combos is None:
            if self.feasible_action_count() > 1_000_000:
                raise ValueError("too many feasible actions to enumerate")
            self._combos = np.array(list(self.feasible_actions()), dtype=np.int64).reshape(-1, self.K)
        return self._combos


class RoutingEnv(Environment):
    """Directed multigraph; arms are edges, actions are simple source-to-dest paths."""

    variant = "routing"

    def __init__(self, n_nodes, edges, source, dest):
        self.n_nodes = int(n_nodes)
        self.edges = [(int(u), int(v)) for u, v in edges]
        self.source, self.dest = int(source), int(dest)
        if self.source == self.dest:
            raise ValueError("source and destination must differ")
        for u, v in self.edges:
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes) or u == v:
                raise ValueError(f"bad edge ({u}, {v})")
        self.m = len(self.edges)
        self.out_edges = [[] for _ in range(self.n_nodes)]
        for idx, (u, _) in enumerate(self.edges):
            self.out_edges[u].append(idx)
        self._count = None
        if self.feasible_action_count() == 0:
            raise ValueError("destination is unreachable from source")
        self.K = max(1, self.longest_path_edges())

    def longest_path_edges(self):
        if self.feasible_action_count() <= 200_000:
            return max(len(p) for p in self.feasible_actions())
        return self.n_nodes - 1

    def validate(self, action):
        action = tuple(int(a) for a in action)
        if not action:
            raise InfeasibleActionError("empty path")
        node = self.source
        seen = {node}
        for e in action:
            if not 0 <= e < self.m:
                raise InfeasibleActionError(f"edge index {e} out of range")
            u, v = self.edges[e]
            if u != node or v in seen:
                raise InfeasibleActionError(f"{action} is not a simple path")
            seen.add(v)
            node = v
        if node != self.dest:
            raise InfeasibleActionError(f"{action} does not end at the destination")
        return action

    def trigger_and_observe(self, action, outcomes):
        action = self.validate(action)
        triggered = []
        for e in action:
            triggered.append(e)
            if outcomes[e] == 0:
                break
        obs = np.asarray([outcomes[e] for e in triggered], dtype=float)
        reward = float(len(triggered) == len(action) and bool(np.all(obs == 1.0)))
        return Feedback(tuple(triggered), obs, reward)

    def expected_reward(self, action, mu):
        mu = self._check_mu(mu)
        action = self.validate(action)
        return float(np.prod(mu[list(action)]))

    def triggering_probs(self, action, mu):
        mu = self._check_mu(mu)
        action = self.validate(action)
        p = np.zeros(self.m)
        reach = 1.0
        for e in action:
            p[e] = reach
            reach *= mu[e]
        return p

    def feasible_actions(self):
        paths = []

        def walk(node, path, seen):
            if node == self.dest:
                paths.append(tuple(path))
                return
            for e in self.out_edges[node]:
                v = self.edges[e][1]
                if v not in seen:
                    seen.add(v)
                    path.append(e)
                    walk(v, path, seen)
                    path.pop()
                    seen.discard(v)

        walk(self.source, [], {self.source})
        return iter(sorted(paths))

    def feasible_action_count(self):
        if self._count is None:
            self._count = sum(1 for _ in self.feasible_actions())
        return self._count

    def oracle(self, mu):
        from clogb.oracles import dijkstra_route
        return dijkstra_route(mu, self)


class MatchingEnv(Environment):
    """Bipartite users x channels; arms are allowed pairs; actions match every user."""

    variant = "matching"

    def __init__(self, n_users, n_channels, pairs):
        self.n_users, self.n_channels = int(n_users), int(n_channels)
        if self.n_users > self.n_channels:
            raise ValueError("need at least as many channels as users")
        self.pairs = [(int(u), int(v)) for u, v in pairs]
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("duplicate pairs")
        for u, v in self.pairs:
            if not (0 <= u < self.n_users and 0 <= v < self.n_channels):
                raise ValueError(f"bad pair ({u}, {v})")
        self.m = len(self.pairs)
        self.K = self.n_users
        self.pair_index = {p: i for i, p in enumerate(self.pairs)}

    def validate(self, action):
        action = tuple(sorted(int(a) for a in action))
        if len(action) != self.n_users or len(set(action)) != len(action):
            raise InfeasibleActionError(f"matching must contain {self.n_users} distinct pairs")
        if min(action) < 0 or max(action) >= self.m:
            raise InfeasibleActionError("pair index out of range")
        users = {self.pairs[a][0] for a in action}
        chans = {self.pairs[a][1] for a in action}
        if len(users) != self.n_users or len(chans) != self.n_users:
            raise InfeasibleActionError(f"{action} is not a matching of all users")
        return action

    def trigger_and_observe(self, action, outcomes):
        action = self.validate(action)
        obs = np.asarray([outcomes[a] for a in action], dtype=float)
        return Feedback(action, obs, float(obs.sum()))

    def expected_reward(self, action, mu):
        mu = self._check_mu(mu)
        action = self.validate(action)
        return float(np.sum(mu[list(action)]))

    def triggering_probs(self, action, mu):
        self._check_mu(mu)
        p = np.zeros(self.m)
        p[list(self.validate(action))] = 1.0
        return p

    def weight_matrix(self, mu):
        w = np.full((self.n_users, self.n_channels), -np.inf)
        for i, (u, v) in enumerate(self.pairs):
            w[u, v] = mu[i]
        return w

    def feasible_actions(self):
        out = []
        for chans in itertools.permutations(range(self.n_channels), self.n_users):
            idx = [self.pair_index.get((u, v)) for u, v in enumerate(chans)]
            if None not in idx:
                out.append(tuple(sorted(idx)))
        return iter(sorted(out))

    def feasible_action_count(self):
        return sum(1 for _ in self.feasible_actions())

    def oracle(self, mu):
        from clogb.oracles import hungarian
        mu = self._check_mu(mu)
        res = hungarian(self.weight_matrix(mu))
        action = tuple(sorted(self.pair_index[p] for p in res.action))
        return type(res)(action, self.expected_reward(action, mu), 1.0)

    def burn_in_action(self, arm, scores):
        from clogb.oracles import hungarian
        w = self.weight_matrix(np.asarray(scores, dtype=float))
        u, v = self.pairs[arm]
        w[u, :] = -np.inf
        w[:, v] = -np.inf
        w[u, v] = np.sum(np.abs(scores)) + 1.0
        res = hungarian(w)
        return tuple(sorted(self.pair_index[p] for p in res.action))


class PmcEnv(Environment):
    """Probabilistic maximum coverage over a server/user bipartite graph."""

    variant = "pmc"
    alpha = 1.0 - 1.0 / math.e

    def __init__(self, n_servers, n_users, edges, budget, user_triggering=True):
        self.n_servers, self.n_users = int(n_servers), int(n_users)
        self.edges = [(int(u), int(v)) for u, v in edges]
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("duplicate edges")
        for u, v in self.edges:
            if not (0 <= u < self.n_servers and 0 <= v < self.n_users):
                raise ValueError(f"bad edge ({u}, {v})")
        self.budget = int(budget)
        if not 1 <= self.budget <= self.n_servers:
            raise ValueError("budget must lie in [1, n_servers]")
        self.user_triggering = bool(user_triggering)
        self.n_edges = len(self.edges)
        self.m = self.n_edges + (self.n_users if self.user_triggering else 0)
        self.server_edges = [[] for _ in range(self.n_servers)]
        for i, (u, _) in enumerate(self.edges):
            self.server_edges[u].append(i)
        self.edge_user = np.array([v for _, v in self.edges], dtype=np.int64)
        degrees = sorted((len(e) for e in self.server_edges), reverse=True)
        self.K = sum(degrees[: self.budget]) + (self.n_users if self.user_triggering else 0)

    def user_arm(self, v):
        if not self.user_triggering:
            raise ValueError("user nodes are not arms when user_triggering is off")
        return self.n_edges + v

    def validate(self, action):
        action = tuple(sorted(int(a) for a in action))
        if not 1 <= len(action) <= self.budget or len(set(action)) != len(action):
            raise InfeasibleActionError(f"select between 1 and {self.budget} distinct servers")
        if action[0] < 0 or action[-1] >= self.n_servers:
            raise InfeasibleActionError("server index out of range")
        return action

    def _edge_arms(self, action):
        return [e for u in action for e in self.server_edges[u]]

    def arms_of(self, action):
        edges = self._edge_arms(action)
        if not self.user_triggering:
            return tuple(edges)
        users = sorted({int(self.edge_user[e]) for e in edges})
        return tuple(edges) + tuple(self.n_edges + v for v in users)

    def trigger_and_observe(self, action, outcomes):
        action = self.validate(action)
        edges = sorted(self._edge_arms(action))
        covered = sorted({int(self.edge_user[e]) for e in edges if outcomes[e] == 1})
        triggered = list(edges)
        reward = 0.0
        if self.user_triggering:
            for v in covered:
                triggered.append(self.n_edges + v)
                reward += float(outcomes[self.n_edges + v])
        else:
            reward = float(len(covered))
        obs = np.asarray([outcomes[a] for a in triggered], dtype=float)
        return Feedback(tuple(triggered), obs, reward)

    def coverage_probs(self, action, mu):
        """Probability each user is covered by the selected servers."""
        miss = np.ones(self.n_users)
        for e in self._edge_arms(action):
            miss[self.edge_user[e]] *= 1.0 - mu[e]
        return 1.0 - miss

    def expected_reward(self, action, mu):
        mu = self._check_mu(mu)
        action = self.validate(action)
        cover = self.coverage_probs(action, mu)
        if self.user_triggering:
            return float(cover @ mu[self.n_edges:])
        return float(cover.sum())

    def triggering_probs(self, action, mu):
        mu = self._check_mu(mu)
        action = self.validate(action)
        p = np.zeros(self.m)
        p[self._edge_arms(action)] = 1.0
        if self.user_triggering:
            p[self.n_edges:] = self.coverage_probs(action, mu)
        return p

    def feasible_actions(self):
        # the reward is monotone in the server set, so full-budget sets suffice
        return itertools.combinations(range(self.n_servers), self.budget)

    def feasible_action_count(self):
        return math.comb(self.n_servers, self.budget)

    def oracle(self, mu):
        from clogb.oracles import greedy_pmc
        return greedy_pmc(mu, self, self.budget)

    def random_action(self, rng):
        return tuple(sorted(int(u) for u in rng.choice(self.n_servers, self.budget, replace=False)))

    def burn_in_action(self, arm, scores):
        scores = np.asarray(scores, dtype=float)
        if arm < self.n_edges:
            forced = self.edges[arm][0]
        else:
            # a user node needs a server with an edge to it; take the best-scored one
            v = arm - self.n_edges
            cands = [(-(scores[e]), self.edges[e][0]) for e in range(self.n_edges) if self.edge_user[e] == v]
            if not cands:
                raise InfeasibleActionError(f"user {v} has no incident edges")
            forced = min(cands)[1]
        server_score = np.array([scores[self.server_edges[u]].sum() for u in range(self.n_servers)])
        order = [int(u) for u in np.lexsort((np.arange(self.n_servers), -server_score)) if u != forced]
        return tuple(sorted([forced] + order[: self.budget - 1]))


# ---------------------------------------------------------------------------
# ground truth and features


def _unit_ball_rows(raw):
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    return np.where(norms > 1.0, raw / np.maximum(norms, 1e-300), raw)


class StaticFeatures:
    static = True

    def __init__(self, features):
        self.features = np.asarray(features, dtype=float)
        if np.any(np.linalg.norm(self.features, axis=1) > 1.0 + 1e-12):
            raise ValueError("features must lie in the unit ball")

    def __call__(self, t):
        return self.features


class GeneratedFeatures:
    """Per-round U(-1,1)^d features, reproducible for any round from (seed, t)."""

    static = False

    def __init__(self, seed, m, d):
        self.seed, self.m, self.d = int(seed), int(m), int(d)

    def __call__(self, t):
        rng = np.random.default_rng([self.seed, int(t)])
        return _unit_ball_rows(rng.uniform(-1.0, 1.0, size=(self.m, self.d)))


@dataclass
class GroundTruth:
    theta_star: np.ndarray
    feature_schedule: object
    L: float = 1.0

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        if np.linalg.norm(self.theta_star) > self.L + 1e-12:
            raise ValueError("||theta_star|| exceeds L")

    @property
    def d(self):
        return self.theta_star.shape[0]

    def features(self, t):
        return self.feature_schedule(t)

    def means(self, t):
        return sigmoid(self.features(t) @ self.theta_star)

    def kappa_exact(self):
        """max(4, 1 / min_i slope(theta*.phi_i)); worst case over the unit ball for generated maps."""
        if self.feature_schedule.static:
            z = np.abs(self.feature_schedule.features @ self.theta_star)
            worst = float(np.max(z)) if z.size else 0.0
        else:
            worst = float(np.linalg.norm(self.theta_star))
        return max(4.0, 1.0 / float(sigmoid_deriv(worst)))


def sample_outcomes(truth, feature_map, rng):
    """Independent Bernoulli(sigmoid(theta*.phi_i)) outcome for every arm."""
    mu = sigmoid(np.asarray(feature_map, dtype=float) @ truth.theta_star)
    return (rng.random(mu.shape[0]) < mu).astype(np.int8)


# ---------------------------------------------------------------------------
# synthetic instances


@dataclass
class InstanceSpec:
    variant: str = "cascading"
    d: int = 5
    L: float = 1.0
    seed: int = 0
    time_varying: bool = False
    kappa_mode: str = "exact"
    # cascading
    m: int = 20
    K: int = 5
    # pmc
    n_servers: int = 5
    n_users: int = 4
    budget: int = 2
    user_triggering: bool = True
    # matching
    n_channels: int = 4
    # routing
    n_nodes: int = 6
    source: int = 0
    dest: int = -1
    # pmc / matching / routing edge density, or explicit edges
    edge_prob: float = 0.5
    edges: list = field(default_factory=list)

    VARIANTS = ("cascading", "pmc", "matching", "routing")

    def __post_init__(self):
        if self.variant not in self.VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {self.VARIANTS}")
        if self.kappa_mode not in ("exact", "bound"):
            raise ValueError("kappa_mode must be 'exact' or 'bound'")
        if self.d < 1 or self.L <= 0:
            raise ValueError("need d >= 1 and L > 0")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ValueError("edge_prob must lie in [0, 1]")
        if self.variant == "cascading" and not 1 <= self.K <= self.m:
            raise ValueError(f"cascading needs 1 <= K <= m (got K={self.K}, m={self.m})")
        if self.variant == "pmc" and not (1 <= self.budget <= self.n_servers and self.n_users >= 1):
            raise ValueError("pmc needs 1 <= budget <= n_servers and n_users >= 1")
        if self.variant == "matching" and not 1 <= self.n_users <= self.n_channels:
            raise ValueError("matching needs 1 <= n_users <= n_channels")
        if self.variant == "routing" and self.n_nodes < 2:
            raise ValueError("routing needs n_nodes >= 2")


def _random_graph(spec, rng):
    if spec.edges:
        return [tuple(e) for e in spec.edges]
    if spec.variant == "pmc":
        edges = [(u, v) for u in range(spec.n_servers) for v in range(spec.n_users)
                 if rng.random() < spec.edge_prob]
        have = {v for _, v in edges}
        for v in range(spec.n_users):
            if v not in have:
                edges.append((int(rng.integers(spec.n_servers)), v))
        return sorted(edges)
    if spec.variant == "matching":
        edges = {(u, u) for u in range(spec.n_users)}
        edges |= {(u, v) for u in range(spec.n_users) for v in range(spec.n_channels)
                  if rng.random() < spec.edge_prob}
        return sorted(edges)
    # routing: a random DAG over 0..n-1 that always contains the chain i -> i+1
    n = spec.n_nodes
    edges = [(i, i + 1) for i in range(n - 1)]
    edges += [(i, j) for i in range(n) for j in range(i + 2, n) if rng.random() < spec.edge_prob]
    return sorted(edges)


def build_environment(spec, edges):
    if spec.variant == "cascading":
        return CascadingEnv(spec.m, spec.K)
    if spec.variant == "pmc":
        return PmcEnv(spec.n_servers, spec.n_users, edges, spec.budget, spec.user_triggering)
    if spec.variant == "matching":
        return MatchingEnv(spec.n_users, spec.n_channels, edges)
    dest = spec.dest if spec.dest >= 0 else spec.n_nodes - 1
    return RoutingEnv(spec.n_nodes, edges, spec.source, dest)


def synth_instance(seed, spec):
    """Deterministic (GroundTruth, Environment) pair for ``seed`` and ``spec``."""
    rng = np.random.default_rng(seed)
    edges = _random_graph(spec, rng)
    env = build_environment(spec, edges)
    theta = rng.uniform(-1.0, 1.0, size=spec.d)
    norm = np.linalg.norm(theta)
    if norm > spec.L:
        theta *= spec.L / norm
    if spec.time_varying:
        schedule = GeneratedFeatures(int(rng.integers(2**32)), env.m, spec.d)
    else:
        schedule = StaticFeatures(_unit_ball_rows(rng.uniform(-1.0, 1.0, size=(env.m, spec.d))))
    return GroundTruth(theta, schedule, spec.L), env


def tpvm_diagnostic(env, action, mu, mu_prime, coefficients):
    """Evaluate the variance-modulated smoothness bound with zeta = mu' - mu, eta = 0.

    Returns (|r(S; mu') - r(S; mu)|, bound).  Diagnostic only.
    """
    b_v, _, lam = coefficients
    mu = np.asarray(mu, dtype=float)
    mu_prime = np.asarray(mu_prime, dtype=float)
    lhs = abs(env.expected_reward(action, mu_prime) - env.expected_reward(action, mu))
    p = env.triggering_probs(action, mu)
    zeta = mu_prime - mu
    mask = p > 0
    var = mu[mask] * (1.0 - mu[mask])
    rhs = b_v * math.sqrt(float(np.sum(p[mask] ** lam * zeta[mask] ** 2 / var)))
    return lhs, rhs
