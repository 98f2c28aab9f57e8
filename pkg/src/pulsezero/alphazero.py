"""PUCT Monte-Carlo tree search with unique-solution pruning, plus the
self-play loop that trains the policy/value network from a replay buffer.

The search tree persists across episodes: every terminal node reached by an
episode is flagged exhausted, the flag propagates to ancestors whose entire
subtree is spent, and action selection never re-enters a flagged branch, so
the stream of emitted action sequences contains no duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DomainError,
    InvalidInputError,
    NodeExhaustedError,
    SearchSpaceExhausted,
)
from .network import ReplayBuffer, ReplayRecord, TrainingConfig, encode_state
from .records import Budget, OptimizationRecord


@dataclass(frozen=True)
class SearchConfig:
    """Tree-search hyperparameters; one common set serves every task."""

    c_puct: float = 1.0
    simulations: int = 100
    tau_init: float = 1.0
    tau_anneal_rate: float = 0.001
    deterministic_threshold: float = 0.90
    dirichlet_alpha: float = 0.03
    dirichlet_epsilon: float = 0.25

    def __post_init__(self):
        positive = (
            self.c_puct,
            self.tau_init,
            self.tau_anneal_rate,
            self.deterministic_threshold,
            self.dirichlet_alpha,
        )
        if any(x <= 0 for x in positive):
            raise DomainError("search parameters must be positive")
        if not 0.0 <= self.dirichlet_epsilon <= 1.0:
            raise DomainError("dirichlet_epsilon must lie in [0, 1]")
        if self.simulations < 2:
            raise DomainError("need at least 2 simulations per move")

    def tau_for_episode(self, episodes_completed: int) -> float:
        """Hyperbolic temperature schedule tau_k = tau_0 / (1 + rate * k)."""
        return self.tau_init / (1.0 + self.tau_anneal_rate * episodes_completed)


class TreeNode:
    """One state in the search tree with per-action edge statistics
    (visit count N, total value W, mean value Q, prior P)."""

    __slots__ = (
        "state",
        "action_count",
        "parent",
        "terminal",
        "reward",
        "expanded",
        "exhausted",
        "visit_counts",
        "total_values",
        "mean_values",
        "priors",
        "children",
    )

    def __init__(self, state, action_count, parent=None, terminal=False, reward=0.0):
        self.state = state
        self.action_count = action_count
        self.parent = parent
        self.terminal = terminal
        self.reward = reward
        self.expanded = False
        self.exhausted = False
        self.visit_counts = None
        self.total_values = None
        self.mean_values = None
        self.priors = None
        self.children: dict[int, TreeNode] = {}

    def install_priors(self, priors: np.ndarray) -> None:
        self.visit_counts = np.zeros(self.action_count)
        self.total_values = np.zeros(self.action_count)
        self.mean_values = np.zeros(self.action_count)
        self.priors = np.asarray(priors, dtype=float)
        self.expanded = True

    def exhausted_mask(self) -> np.ndarray:
        mask = np.zeros(self.action_count, dtype=bool)
        for action, child in self.children.items():
            if child.exhausted:
                mask[action] = True
        return mask

    def all_children_exhausted(self) -> bool:
        return len(self.children) == self.action_count and all(
            child.exhausted for child in self.children.values()
        )


def select_child(node: TreeNode, c_puct: float) -> int:
    """argmax over non-exhausted actions of Q + c_puct * P * sqrt(sum N)/(1 + N).

    Ties break to the lowest action index. The 1 + N denominator keeps the
    uncertainty term finite on unvisited edges.
    """
    if not node.expanded:
        raise InvalidInputError("cannot select from an unexpanded node")
    mask = node.exhausted_mask()
    if mask.all():
        raise NodeExhaustedError("all children exhausted")
    sqrt_total = np.sqrt(node.visit_counts.sum())
    scores = node.mean_values + c_puct * node.priors * sqrt_total / (1.0 + node.visit_counts)
    scores[mask] = -np.inf
    return int(np.argmax(scores))


def expand_and_evaluate(node: TreeNode, network, horizon: int) -> float:
    """Install normalized network priors on a fresh leaf and return its value;
    terminal leaves return the true fidelity without a network call."""
    if node.terminal:
        return node.reward
    if node.expanded:
        raise InvalidInputError("node already expanded")
    encoding = encode_state(node.state.unitary, node.state.step_index, horizon)
    p, value = network.forward_one(encoding)
    total = p.sum()
    if total > 0:
        priors = p / total
    else:
        priors = np.full(node.action_count, 1.0 / node.action_count)
    node.install_priors(priors)
    return value


def backup(path, value: float) -> None:
    """N += 1, W += v, Q = W/N on every (node, action) edge of the path."""
    for node, action in path:
        node.visit_counts[action] += 1.0
        node.total_values[action] += value
        node.mean_values[action] = node.total_values[action] / node.visit_counts[action]


def root_policy(
    root,
    tau: float,
    deterministic_threshold: float = 0.90,
    exclude_exhausted: bool = False,
) -> np.ndarray:
    """Visit-count policy pi(a) = N(a)^(1/tau) / sum_b N(b)^(1/tau).

    Once tau has annealed below the threshold the policy collapses to a
    one-hot argmax (lowest index on ties). Accepts a TreeNode or a raw
    visit-count array.
    """
    counts = np.asarray(getattr(root, "visit_counts", root), dtype=float).copy()
    if exclude_exhausted and isinstance(root, TreeNode):
        counts[root.exhausted_mask()] = 0.0
    total = counts.sum()
    if total <= 0:
        raise DomainError("root has no visits to derive a policy from")
    policy = np.zeros_like(counts)
    if tau < deterministic_threshold:
        policy[int(np.argmax(counts))] = 1.0
        return policy
    visited = counts > 0
    log_weights = np.log(counts[visited]) / tau
    log_weights -= log_weights.max()  # overflow guard for small tau
    weights = np.exp(log_weights)
    policy[visited] = weights / weights.sum()
    return policy


def add_root_noise(
    root: TreeNode, rng: np.random.Generator, alpha: float = 0.03, epsilon: float = 0.25
) -> None:
    """Mix Dirichlet(alpha) noise into the root priors:
    P <- (1 - eps) * P + eps * eta."""
    if not root.expanded:
        raise InvalidInputError("root must be expanded before noise is added")
    if epsilon == 0.0:
        return
    eta = rng.dirichlet(np.full(root.action_count, alpha))
    root.priors = (1.0 - epsilon) * root.priors + epsilon * eta


def mark_exhausted(node: TreeNode) -> None:
    """Flag a spent node and propagate to every ancestor whose children are
    now all spent."""
    node.exhausted = True
    parent = node.parent
    while parent is not None and not parent.exhausted and parent.all_children_exhausted():
        parent.exhausted = True
        parent = parent.parent


def _make_child(node: TreeNode, action: int, env) -> TreeNode:
    state, reward, done = env.transition(node.state, action)
    child = TreeNode(
        state, env.action_count, parent=node, terminal=done, reward=reward
    )
    node.children[action] = child
    return child


def _simulate(root: TreeNode, env, network, config: SearchConfig) -> float:
    """One tree search: descend to a leaf or terminal, evaluate, back up."""
    node = root
    path = []
    while True:
        if node.terminal:
            value = node.reward
            break
        if not node.expanded:
            value = expand_and_evaluate(node, network, env.horizon)
            break
        action = select_child(node, config.c_puct)
        path.append((node, action))
        child = node.children.get(action)
        if child is None:
            child = _make_child(node, action, env)
        node = child
    backup(path, value)
    return value


@dataclass
class EpisodeResult:
    actions: tuple[int, ...]
    terminal_fidelity: float
    policies: list[np.ndarray]
    encodings: list[np.ndarray]


def run_episode(
    env,
    network,
    config: SearchConfig,
    rng: np.random.Generator,
    root: TreeNode | None = None,
    tau: float = 1.0,
    replay_buffer: ReplayBuffer | None = None,
) -> EpisodeResult:
    """Play one episode: per move run ``config.simulations`` searches, draw an
    action from the visit-count policy (argmax once tau is past the
    deterministic switch), descend reusing the subtree.

    Raises SearchSpaceExhausted when the root's whole subtree has already
    been emitted. Per-step (encoding, policy) pairs and the shared terminal
    outcome are appended to ``replay_buffer`` when one is given.
    """
    if root is None:
        root = TreeNode(env.initial_state(), env.action_count)
    if root.exhausted:
        raise SearchSpaceExhausted("every action sequence has been emitted")
    deterministic = tau < config.deterministic_threshold
    node = root
    actions: list[int] = []
    policies: list[np.ndarray] = []
    encodings: list[np.ndarray] = []

    while not node.terminal:
        if not node.expanded:
            expand_and_evaluate(node, network, env.horizon)
        add_root_noise(node, rng, config.dirichlet_alpha, config.dirichlet_epsilon)
        for _ in range(config.simulations):
            _simulate(node, env, network, config)
        policy = root_policy(
            node, tau, config.deterministic_threshold, exclude_exhausted=True
        )
        encodings.append(
            encode_state(node.state.unitary, node.state.step_index, env.horizon)
        )
        policies.append(policy)
        if deterministic:
            action = int(np.argmax(policy))
        else:
            action = int(rng.choice(node.action_count, p=policy))
        child = node.children.get(action)
        if child is None:
            child = _make_child(node, action, env)
        node = child
        actions.append(action)

    outcome = node.reward
    mark_exhausted(node)
    if replay_buffer is not None:
        for encoding, policy in zip(encodings, policies):
            replay_buffer.push(ReplayRecord(encoding, policy, outcome))
    return EpisodeResult(tuple(actions), outcome, policies, encodings)


class SelfPlay:
    """Owns the persistent tree, the replay buffer and the training cadence
    for one environment/network pair."""

    def __init__(
        self,
        env,
        network,
        config: SearchConfig = SearchConfig(),
        training: TrainingConfig = TrainingConfig(),
        rng: np.random.Generator | None = None,
        train: bool = True,
    ):
        self.env = env
        self.network = network
        self.config = config
        self.training = training
        self.rng = rng if rng is not None else np.random.default_rng()
        self.train = train
        self.buffer = ReplayBuffer(training.buffer_capacity)
        self.root = TreeNode(env.initial_state(), env.action_count)
        self.episodes_completed = 0

    def play_episode(self) -> EpisodeResult:
        tau = self.config.tau_for_episode(self.episodes_completed)
        result = run_episode(
            self.env,
            self.network,
            self.config,
            self.rng,
            root=self.root,
            tau=tau,
            replay_buffer=self.buffer,
        )
        self.episodes_completed += 1
        if self.train and len(self.buffer) >= self.training.min_fill:
            batches = len(result.actions) * self.training.batches_per_step
            for _ in range(batches):
                x, pi, z = self.buffer.sample(self.training.batch_size, self.rng)
                self.network.sgd_update(x, pi, z)
        return result


@dataclass
class AlphaZeroRun:
    records: list[OptimizationRecord]
    exhausted: bool
    episodes: int
    self_play: SelfPlay = field(repr=False, default=None)


def training_driver(
    env,
    network,
    budget: Budget,
    rng: np.random.Generator,
    config: SearchConfig = SearchConfig(),
    training: TrainingConfig = TrainingConfig(),
    seed: int = 0,
    config_hash: str = "",
    train: bool = True,
) -> AlphaZeroRun:
    """Interleave self-play episode generation with network training until
    the budget runs out or the search space is exhausted. Emits one record
    per episode; all emitted action sequences are pairwise distinct."""
    self_play = SelfPlay(env, network, config, training, rng, train=train)
    clock = budget.start()
    records: list[OptimizationRecord] = []
    exhausted = False
    while not clock.exhausted(len(records)):
        try:
            result = self_play.play_episode()
        except SearchSpaceExhausted:
            exhausted = True
            break
        pulse = None
        if env.action_amplitudes is not None:
            pulse = env.sequence_amplitudes(result.actions)
        records.append(
            OptimizationRecord(
                index=len(records),
                infidelity=1.0 - result.terminal_fidelity,
                wall_time_s=clock.elapsed(),
                optimizer="alphazero",
                seed=seed,
                config_hash=config_hash,
                sequence=result.actions,
                pulse=pulse,
            )
        )
    return AlphaZeroRun(records, exhausted, self_play.episodes_completed, self_play)
