"""Comparison optimizers: genetic algorithm over bit strings, tabular
Q-learning, greedy stochastic descent, quasi-Newton GRAPE with exact
matrix-exponential derivatives, and the tree-search-seeded GRAPE hybrid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import quantum as q
from .errors import DomainError, InvalidInputError
from .records import Budget, BudgetClock, OptimizationRecord

# ---------------------------------------------------------------------------
# Genetic algorithm
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 70
    mutation_probability: float = 0.001
    parents_per_iteration: int = 60  # 2 x 30 parent draws

    def __post_init__(self):
        if self.population_size <= self.parents_per_iteration:
            raise DomainError("population must exceed parents per iteration")
        if self.parents_per_iteration < 2 or self.parents_per_iteration % 2:
            raise DomainError("parents_per_iteration must be an even number >= 2")
        if not 0.0 <= self.mutation_probability <= 1.0:
            raise DomainError("mutation_probability must lie in [0, 1]")


def _select_parents(fitness, count, rng):
    total = fitness.sum()
    if total > 0:
        probs = fitness / total
    else:
        probs = np.full(fitness.size, 1.0 / fitness.size)
    return rng.choice(fitness.size, size=count, p=probs)


def single_point_crossover(parent_a, parent_b, point: int):
    """Swap tails after ``point`` (1 <= point < length)."""
    child_a = np.concatenate([parent_a[:point], parent_b[point:]])
    child_b = np.concatenate([parent_b[:point], parent_a[point:]])
    return child_a, child_b


def ga_optimize(
    objective,
    n_bits: int,
    config: GaConfig,
    budget: Budget,
    rng: np.random.Generator,
    seed: int = 0,
    config_hash: str = "",
) -> list[OptimizationRecord]:
    """Fitness-proportional selection, single-point crossover, per-bit
    mutation; offspring replace the worst members only when they improve.
    Emits the best population member once per iteration."""
    if n_bits < 2:
        raise DomainError("need at least 2 bits for single-point crossover")
    population = rng.integers(0, 2, size=(config.population_size, n_bits))
    fitness = np.array([objective(ind) for ind in population])
    records: list[OptimizationRecord] = []
    clock = budget.start()
    iteration = 0
    while not clock.exhausted(iteration):
        parents = _select_parents(fitness, config.parents_per_iteration, rng)
        offspring = np.empty((config.parents_per_iteration, n_bits), dtype=population.dtype)
        for k in range(config.parents_per_iteration // 2):
            point = int(rng.integers(1, n_bits))
            offspring[2 * k], offspring[2 * k + 1] = single_point_crossover(
                population[parents[2 * k]], population[parents[2 * k + 1]], point
            )
        flips = rng.random(offspring.shape) < config.mutation_probability
        offspring ^= flips
        child_fitness = np.array([objective(child) for child in offspring])
        for child_idx in np.argsort(child_fitness)[::-1]:
            worst = int(np.argmin(fitness))
            if child_fitness[child_idx] > fitness[worst]:
                population[worst] = offspring[child_idx]
                fitness[worst] = child_fitness[child_idx]
        best = int(np.argmax(fitness))
        records.append(
            OptimizationRecord(
                index=iteration,
                infidelity=1.0 - float(fitness[best]),
                wall_time_s=clock.elapsed(),
                optimizer="ga",
                seed=seed,
                config_hash=config_hash,
                sequence=tuple(int(b) for b in population[best]),
            )
        )
        iteration += 1
    return records


# ---------------------------------------------------------------------------
# Tabular Q-learning
# ---------------------------------------------------------------------------


@dataclass
class QLearningRun:
    records: list[OptimizationRecord]
    q_table: dict


def q_learning_optimize(
    env,
    budget: Budget,
    rng: np.random.Generator,
    alpha: float = 0.001,
    init_scale: float = 0.0,
    seed: int = 0,
    config_hash: str = "",
) -> QLearningRun:
    """Episodic one-step Q-learning on states (step index, previous action),
    with epsilon-greedy control and epsilon annealed linearly from 1 to 0
    across the budget. The terminal bootstrap term is zero.

    The table defaults to zero initialization; set init_scale > 0 for the
    randomly initialized variant (entries are drawn lazily on first visit).
    """
    table: dict = {}

    def q_values(key):
        values = table.get(key)
        if values is None:
            if init_scale > 0:
                values = init_scale * rng.standard_normal(env.action_count)
            else:
                values = np.zeros(env.action_count)
            table[key] = values
        return values

    records: list[OptimizationRecord] = []
    clock = budget.start()
    episode = 0
    while not clock.exhausted(episode):
        if budget.units is not None:
            progress = episode / max(1, budget.units - 1)
        else:
            progress = min(1.0, clock.elapsed() / budget.seconds)
        epsilon = 1.0 - progress
        state = env.initial_state()
        key = (0, -1)
        terminal = 0.0
        actions = []
        for t in range(env.horizon):
            values = q_values(key)
            if rng.random() < epsilon:
                action = int(rng.integers(env.action_count))
            else:
                action = int(np.argmax(values))
            state, reward, done = env.transition(state, action)
            next_key = (t + 1, action)
            bootstrap = 0.0 if done else float(np.max(q_values(next_key)))
            values[action] += alpha * (reward + bootstrap - values[action])
            key = next_key
            actions.append(action)
            if done:
                terminal = reward
        records.append(
            OptimizationRecord(
                index=episode,
                infidelity=1.0 - terminal,
                wall_time_s=clock.elapsed(),
                optimizer="qlearning",
                seed=seed,
                config_hash=config_hash,
                sequence=tuple(actions),
            )
        )
        episode += 1
    return QLearningRun(records, table)


def greedy_sequence(env, q_table: dict) -> tuple[int, ...]:
    """Follow the argmax policy of a learned table through one episode."""
    actions = []
    key = (0, -1)
    for t in range(env.horizon):
        values = q_table.get(key)
        action = 0 if values is None else int(np.argmax(values))
        actions.append(action)
        key = (t + 1, action)
    return tuple(actions)


# ---------------------------------------------------------------------------
# Stochastic descent
# ---------------------------------------------------------------------------


def stochastic_descent(
    env,
    budget: Budget,
    rng: np.random.Generator,
    seed: int = 0,
    config_hash: str = "",
) -> list[OptimizationRecord]:
    """Greedy local search: change the action at a random time index and keep
    the change iff the terminal fidelity strictly increases.

    Proposals sweep a random permutation of all (time, action) pairs, so a
    full pass (horizon x action_count consecutive proposals) without an
    acceptance certifies a true one-change local optimum; the search then
    restarts from a fresh random sequence. Records are emitted on every
    acceptance and at each convergence (flagged in ``extra``).
    """
    horizon, n_actions = env.horizon, env.action_count
    window = horizon * n_actions
    records: list[OptimizationRecord] = []
    clock = budget.start()
    proposals = 0
    restart = 0

    def fresh():
        seq = rng.integers(0, n_actions, size=horizon)
        return seq, env.sequence_fidelity(seq)

    current, f_current = fresh()
    sweep = [(t, a) for t in range(horizon) for a in range(n_actions)]
    rng.shuffle(sweep)
    cursor = 0
    streak = 0

    while not clock.exhausted(proposals):
        t, a = sweep[cursor]
        cursor += 1
        proposals += 1
        accepted = False
        if a != current[t]:
            candidate = current.copy()
            candidate[t] = a
            f_new = env.sequence_fidelity(candidate)
            if f_new > f_current:
                current, f_current = candidate, f_new
                accepted = True
        if accepted:
            streak = 0
            rng.shuffle(sweep)
            cursor = 0
            records.append(
                OptimizationRecord(
                    index=proposals,
                    infidelity=1.0 - f_current,
                    wall_time_s=clock.elapsed(),
                    optimizer="sd",
                    seed=seed,
                    config_hash=config_hash,
                    sequence=tuple(int(x) for x in current),
                    extra={"restart": restart},
                )
            )
        else:
            streak += 1
            if streak >= window:
                records.append(
                    OptimizationRecord(
                        index=proposals,
                        infidelity=1.0 - f_current,
                        wall_time_s=clock.elapsed(),
                        optimizer="sd",
                        seed=seed,
                        config_hash=config_hash,
                        sequence=tuple(int(x) for x in current),
                        extra={"restart": restart, "converged": True},
                    )
                )
                restart += 1
                current, f_current = fresh()
                rng.shuffle(sweep)
                cursor = 0
                streak = 0
        if cursor == len(sweep):
            rng.shuffle(sweep)
            cursor = 0
    return records


# ---------------------------------------------------------------------------
# GRAPE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrapeConfig:
    """resolution counts substeps per pulse step; sigma enables Gaussian
    filtering of the waveform (None = plain piecewise-constant)."""

    resolution: int = 1
    sigma: float | None = None
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    fidelity_change_tolerance: float = 1e-10
    memory: int = 10

    def __post_init__(self):
        if self.resolution < 1:
            raise DomainError("resolution must be at least 1")
        if self.sigma is not None and self.sigma <= 0:
            raise DomainError("sigma must be positive when set")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be positive")


def _substep_map(n_steps: int, step_duration: float, config: GrapeConfig):
    """(weights, substep duration) with substep drives = weights @ amplitudes."""
    res = config.resolution
    if config.sigma is None:
        weights = np.kron(np.eye(n_steps), np.ones((res, 1)))
    else:
        times = q.filter_sample_times(n_steps, step_duration, res)
        weights = q.filter_weights(n_steps, step_duration, config.sigma, times)
    return weights, step_duration / res


def grape_fidelity(
    amplitudes, system: q.ControlSystem, step_duration: float, config: GrapeConfig
) -> float:
    amplitudes = np.asarray(amplitudes, dtype=float)
    weights, dt = _substep_map(amplitudes.size, step_duration, config)
    steps, _, _ = q.eig_propagators(weights @ amplitudes, system, dt)
    return q.fidelity(q.ordered_product(steps), system.target)


def grape_fidelity_and_gradient(
    amplitudes, system: q.ControlSystem, step_duration: float, config: GrapeConfig
):
    """Exact dF/d(amplitude) via the eigendecomposition form of the matrix
    exponential derivative, with forward/backward propagator caching and the
    chain rule through the filter weights."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    n = amplitudes.size
    weights, dt = _substep_map(n, step_duration, config)
    drives = weights @ amplitudes
    steps, eigvals, eigvecs = q.eig_propagators(drives, system, dt)
    s_count, dim = drives.size, system.dim

    fwd = np.empty((s_count + 1, dim, dim), dtype=np.complex128)
    fwd[0] = np.eye(dim)
    for s in range(s_count):
        fwd[s + 1] = steps[s] @ fwd[s]
    bwd = np.empty((s_count, dim, dim), dtype=np.complex128)
    bwd[-1] = np.eye(dim)
    for s in range(s_count - 2, -1, -1):
        bwd[s] = bwd[s + 1] @ steps[s + 1]

    u_total = fwd[-1]
    overlap = np.trace(system.target.conj().T @ u_total) / dim
    fid = float(np.abs(overlap) ** 2)

    # dU_s/dw = -i*dt * V [ (V† Hc V) ∘ phi ] V†, phi the divided difference
    # of exp(-i*lambda*dt), written in a form stable at degeneracies.
    lam_sum = eigvals[:, :, None] + eigvals[:, None, :]
    lam_diff = eigvals[:, :, None] - eigvals[:, None, :]
    u_half = 0.5 * dt * lam_diff
    phi = np.exp(-0.5j * dt * lam_sum) * np.sinc(u_half / np.pi)
    m = np.einsum("sji,jk,skl->sil", eigvecs.conj(), system.control, eigvecs)
    d_steps = -1j * dt * np.einsum("sij,sjk,slk->sil", eigvecs, m * phi, eigvecs.conj())

    d_overlap = (
        np.einsum("ij,sjk,skl,sli->s", system.target.conj().T, bwd, d_steps, fwd[:-1])
        / dim
    )
    d_fid_sub = 2.0 * np.real(np.conj(overlap) * d_overlap)
    return fid, weights.T @ d_fid_sub


def grape_gradient(
    amplitudes, system: q.ControlSystem, step_duration: float, config: GrapeConfig
) -> np.ndarray:
    return grape_fidelity_and_gradient(amplitudes, system, step_duration, config)[1]


@dataclass
class GrapeResult:
    pulse: np.ndarray
    fidelity: float
    initial_fidelity: float
    iterations: int
    fidelity_trace: list[float] = field(default_factory=list)
    pulse_trace: list[np.ndarray] = field(default_factory=list)
    degraded: bool = False
    stop_reason: str = ""

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity


class _DeadlineReached(Exception):
    pass


def grape_optimize(
    seed_pulse,
    system: q.ControlSystem,
    step_duration: float,
    config: GrapeConfig,
    deadline: BudgetClock | None = None,
    keep_pulse_trace: bool = False,
) -> GrapeResult:
    """Bound-constrained L-BFGS-B ascent of the fidelity from a seed pulse.

    Internally the pulse is rescaled to units of max_drive, so the
    gradient/fidelity-change tolerances refer to O(1) normalized amplitudes.
    Stops on projected gradient norm, relative fidelity change, the
    iteration cap, or a cooperative deadline; a line-search failure returns
    the best iterate with ``degraded`` set.
    """
    scale = system.max_drive
    x0 = np.clip(np.asarray(seed_pulse, dtype=float) / scale, 0.0, 1.0)
    f0 = grape_fidelity(x0 * scale, system, step_duration, config)
    trace = [f0]
    pulses = [x0 * scale] if keep_pulse_trace else []
    best = {"x": x0.copy(), "f": f0}

    def objective(x):
        fid, grad = grape_fidelity_and_gradient(x * scale, system, step_duration, config)
        return -fid, -grad * scale

    def callback(xk):
        fid = grape_fidelity(xk * scale, system, step_duration, config)
        trace.append(fid)
        if keep_pulse_trace:
            pulses.append(np.array(xk) * scale)
        if fid > best["f"]:
            best["f"] = fid
            best["x"] = np.array(xk)
        if deadline is not None and deadline.exhausted(0):
            raise _DeadlineReached

    try:
        res = minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * x0.size,
            callback=callback,
            options={
                "maxiter": config.max_iterations,
                "maxcor": config.memory,
                "gtol": config.gradient_tolerance,
                "ftol": config.fidelity_change_tolerance,
            },
        )
    except _DeadlineReached:
        return GrapeResult(
            pulse=best["x"] * scale,
            fidelity=best["f"],
            initial_fidelity=f0,
            iterations=len(trace) - 1,
            fidelity_trace=trace,
            pulse_trace=pulses,
            stop_reason="deadline",
        )
    final_f = -float(res.fun)
    if final_f >= best["f"]:
        best["f"], best["x"] = final_f, np.array(res.x)
    degraded = (not res.success) and res.status == 2
    return GrapeResult(
        pulse=best["x"] * scale,
        fidelity=best["f"],
        initial_fidelity=f0,
        iterations=int(res.nit),
        fidelity_trace=trace,
        pulse_trace=pulses,
        degraded=degraded,
        stop_reason=str(res.message),
    )


def random_seed_grape(
    system: q.ControlSystem,
    step_duration: float,
    n_steps: int,
    config: GrapeConfig,
    budget: Budget,
    rng: np.random.Generator,
    seed: int = 0,
    config_hash: str = "",
    keep_pulse_trace: bool = False,
) -> list[OptimizationRecord]:
    """Repeated GRAPE from uniform random seeds until the budget runs out.
    With a unit budget, one unit = one restart."""
    records: list[OptimizationRecord] = []
    clock = budget.start()
    restart = 0
    while not clock.exhausted(restart):
        x0 = rng.uniform(0.0, system.max_drive, n_steps)
        result = grape_optimize(
            x0, system, step_duration, config,
            deadline=clock if budget.seconds is not None else None,
            keep_pulse_trace=keep_pulse_trace,
        )
        records.append(
            OptimizationRecord(
                index=restart,
                infidelity=result.infidelity,
                wall_time_s=clock.elapsed(),
                optimizer="grape",
                seed=seed,
                config_hash=config_hash,
                pulse=result.pulse,
                extra={
                    "iterations": result.iterations,
                    "seed_infidelity": 1.0 - result.initial_fidelity,
                    "degraded": result.degraded,
                },
            )
        )
        restart += 1
    return records


# ---------------------------------------------------------------------------
# Hybrid: GRAPE refinement of tree-search solutions
# ---------------------------------------------------------------------------


def hybrid_pipeline(
    az_records,
    system: q.ControlSystem,
    step_duration: float,
    config: GrapeConfig,
    budget: Budget,
    seed: int = 0,
    config_hash: str = "",
    order: str = "best",
    top_k: int | None = None,
) -> list[OptimizationRecord]:
    """Refine discrete-amplitude episode solutions with GRAPE.

    Each input record's pulse becomes a continuous seed; outputs pair the
    refined infidelity with the source episode index. Seeds are processed
    best-first by default so a wall-time budget is spent on the most
    promising solutions; pass order="arrival" for episode order.
    """
    if order not in ("best", "arrival"):
        raise DomainError("order must be 'best' or 'arrival'")
    candidates = [r for r in az_records if r.pulse is not None]
    if order == "best":
        candidates = sorted(candidates, key=lambda r: r.infidelity)
    if top_k is not None:
        candidates = candidates[:top_k]
    records: list[OptimizationRecord] = []
    clock = budget.start()
    for k, source in enumerate(candidates):
        if clock.exhausted(k):
            break
        result = grape_optimize(
            source.pulse, system, step_duration, config,
            deadline=clock if budget.seconds is not None else None,
        )
        records.append(
            OptimizationRecord(
                index=k,
                infidelity=result.infidelity,
                wall_time_s=clock.elapsed(),
                optimizer="hybrid",
                seed=seed,
                config_hash=config_hash,
                pulse=result.pulse,
                extra={
                    "source_index": source.index,
                    "seed_infidelity": source.infidelity,
                    "iterations": result.iterations,
                },
            )
        )
    return records


# ---------------------------------------------------------------------------
# Pulse CSV import/export (seed interchange format)
# ---------------------------------------------------------------------------


def save_pulse_csv(path, pulse: q.PulseSequence) -> None:
    """One amplitude per line, preceded by a header carrying the step
    duration; amplitudes are in rad/s."""
    with open(path, "w") as fh:
        fh.write(f"# step_duration_s={pulse.step_duration:.17g} units=rad/s\n")
        for amp in pulse.amplitudes:
            fh.write(f"{amp:.17g}\n")


def load_pulse_csv(path) -> q.PulseSequence:
    step_duration = None
    amps = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if token.startswith("step_duration_s="):
                        step_duration = float(token.split("=", 1)[1])
                continue
            amps.append(float(line))
    if step_duration is None:
        raise InvalidInputError("pulse CSV is missing the step_duration_s header")
    return q.PulseSequence(np.array(amps), step_duration)
