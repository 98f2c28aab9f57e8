"""Episodic control environments with a uniform reset/step interface.

Three production tasks share the same shape — 60 actions, zero reward until
the final step, terminal reward equal to the gate fidelity of the
accumulated unitary:

  * digital pulse trains built from two picosecond-scale base unitaries,
    grouped into 60 macro-actions of 500 bits each;
  * Gaussian-filtered amplitude steps driven by a precomputed 60x60 table
    of boundary-centered window propagators;
  * plain piecewise-constant amplitude steps.

All per-action unitaries are precomputed once; stepping costs a single
matrix multiplication. Environments also expose a pure transition function
(`transition`) so tree search can branch from arbitrary states.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import quantum as q
from .errors import DomainError, EpisodeCompleteError, InvalidInputError

TABLE_CACHE_VERSION = 1


@dataclass(frozen=True)
class SfqConfig:
    """Digital pulse-train task: 2 ps slots, unit-area-a Gaussian pulses."""

    pulse_spacing: float = 2.0e-12
    gaussian_width: float = 0.25e-12
    pulse_area: float = 2.0 * np.pi / 1000.0
    block_length: int = 500
    macro_action_count: int = 60
    base_substeps: int = 500

    def __post_init__(self):
        if self.pulse_spacing <= 0 or self.gaussian_width <= 0:
            raise DomainError("pulse_spacing and gaussian_width must be positive")
        if self.block_length < 1 or self.macro_action_count < 2:
            raise DomainError("block_length >= 1 and macro_action_count >= 2 required")
        if self.base_substeps < 100:
            raise DomainError("base unitaries need at least 100 integration substeps")


@dataclass(frozen=True)
class FilteredConfig:
    """Gaussian-filtered amplitude task: 4 ns steps smoothed with sigma = 0.7 ns."""

    step_duration: float = 4.0e-9
    sigma: float = 0.7e-9
    amplitude_levels: int = 60
    table_resolution: int = 500

    def __post_init__(self):
        if self.step_duration <= 0 or self.sigma <= 0:
            raise DomainError("step_duration and sigma must be positive")
        if self.amplitude_levels < 2 or self.table_resolution < 1:
            raise DomainError("amplitude_levels >= 2 and table_resolution >= 1 required")


@dataclass(frozen=True)
class PwcConfig:
    """Piecewise-constant amplitude task: 2 ns steps."""

    step_duration: float = 2.0e-9
    amplitude_levels: int = 60

    def __post_init__(self):
        if self.step_duration <= 0:
            raise DomainError("step_duration must be positive")
        if self.amplitude_levels < 2:
            raise DomainError("amplitude_levels must be at least 2")


@dataclass(frozen=True)
class EnvState:
    """Immutable environment snapshot: accumulated unitary, step counter,
    and the previous action (needed by the filtered task and Q-learning)."""

    unitary: np.ndarray
    step_index: int
    last_action: int = -1

    def __post_init__(self):
        u = np.asarray(self.unitary, dtype=np.complex128)
        u.setflags(write=False)
        object.__setattr__(self, "unitary", u)


def amplitude_grid(levels: int, max_drive: float) -> np.ndarray:
    """Equally spaced drive amplitudes including both 0 and max_drive."""
    return np.linspace(0.0, max_drive, levels)


class ControlEnvironment:
    """Base episodic environment: reward is zero everywhere except the final
    step, where it equals fidelity(U(T), target)."""

    def __init__(self, action_count: int, horizon: int, target: np.ndarray):
        if horizon < 1:
            raise DomainError("horizon must be at least 1")
        if action_count < 1:
            raise DomainError("need at least one action")
        self.action_count = int(action_count)
        self.horizon = int(horizon)
        self.target = np.asarray(target, dtype=np.complex128)
        self.dim = self.target.shape[0]
        #: amplitude represented by each action, if meaningful for this task
        self.action_amplitudes: np.ndarray | None = None
        self._state = self.initial_state()

    # -- pure interface -----------------------------------------------------

    def initial_state(self) -> EnvState:
        return EnvState(np.eye(self.dim, dtype=np.complex128), 0, -1)

    def transition(self, state: EnvState, action: int):
        """Apply one action. Returns (next_state, reward, done)."""
        if state.step_index >= self.horizon:
            raise EpisodeCompleteError("episode already complete")
        if not 0 <= action < self.action_count:
            raise DomainError(f"action {action} outside [0, {self.action_count})")
        done = state.step_index + 1 == self.horizon
        unitary = self._advance(state, action, done)
        next_state = EnvState(unitary, state.step_index + 1, action)
        reward = q.fidelity(unitary, self.target) if done else 0.0
        return next_state, reward, done

    def _advance(self, state: EnvState, action: int, terminal: bool) -> np.ndarray:
        raise NotImplementedError

    # -- stateful interface -------------------------------------------------

    @property
    def state(self) -> EnvState:
        return self._state

    @property
    def step_index(self) -> int:
        return self._state.step_index

    def reset(self) -> EnvState:
        self._state = self.initial_state()
        return self._state

    def step(self, action: int):
        self._state, reward, done = self.transition(self._state, action)
        return self._state, reward, done

    # -- helpers ------------------------------------------------------------

    def sequence_fidelity(self, actions) -> float:
        """Terminal reward of a full-length action sequence."""
        actions = list(actions)
        if len(actions) != self.horizon:
            raise InvalidInputError(
                f"sequence length {len(actions)} != horizon {self.horizon}"
            )
        state = self.initial_state()
        reward = 0.0
        for a in actions:
            state, reward, _ = self.transition(state, int(a))
        return reward

    def sequence_amplitudes(self, actions) -> np.ndarray:
        if self.action_amplitudes is None:
            raise InvalidInputError("this task has no per-action amplitude")
        return self.action_amplitudes[np.asarray(actions, dtype=int)]


class TableEnvironment(ControlEnvironment):
    """One fixed unitary per action; stepping left-multiplies it."""

    def __init__(self, action_unitaries: np.ndarray, horizon: int, target: np.ndarray):
        table = np.asarray(action_unitaries, dtype=np.complex128)
        if table.ndim != 3 or table.shape[1] != table.shape[2]:
            raise InvalidInputError("action_unitaries must have shape (A, d, d)")
        super().__init__(table.shape[0], horizon, target)
        self._table = table

    def _advance(self, state, action, terminal):
        return self._table[action] @ state.unitary


class PairTableEnvironment(ControlEnvironment):
    """Filtered-amplitude task driven by boundary-window propagators.

    The evolution from the middle of step k to the middle of step k+1
    depends only on the two adjacent amplitudes (contributions from further
    steps are truncated), so one episode unitary is assembled as

        end_cap[a_N] @ mid[a_{N-1}, a_N] @ ... @ mid[a_1, a_2] @ start_cap[a_1].

    End caps are folded into a terminal-step table so every step costs
    exactly one matrix multiplication.
    """

    def __init__(self, start_caps, mid_table, end_caps, horizon, target):
        start_caps = np.asarray(start_caps, dtype=np.complex128)
        mid_table = np.asarray(mid_table, dtype=np.complex128)
        end_caps = np.asarray(end_caps, dtype=np.complex128)
        super().__init__(start_caps.shape[0], horizon, target)
        self._start = start_caps
        self._mid = mid_table
        # precomposed terminal tables
        self._last_mid = np.einsum("jab,ijbc->ijac", end_caps, mid_table)
        self._full_single = np.einsum("aij,ajk->aik", end_caps, start_caps)

    def _advance(self, state, action, terminal):
        if state.step_index == 0:
            table = self._full_single if terminal else self._start
            return table[action].copy()
        table = self._last_mid if terminal else self._mid
        return table[state.last_action, action] @ state.unitary


# ---------------------------------------------------------------------------
# Digital (SFQ) task
# ---------------------------------------------------------------------------

def sfq_pulse_shape(config: SfqConfig, t: np.ndarray) -> np.ndarray:
    """Gaussian drive of area ``pulse_area`` centered in the 2 ps slot."""
    tau = config.gaussian_width
    center = config.pulse_spacing / 2.0
    return (config.pulse_area / (np.sqrt(2.0 * np.pi) * tau)) * np.exp(
        -((t - center) ** 2) / (2.0 * tau**2)
    )


def sfq_base_unitaries(config: SfqConfig, system: q.ControlSystem):
    """(U0, U1): free evolution over one slot, and evolution under one pulse."""
    dt = config.pulse_spacing
    u0 = q.expm_hermitian(system.drift, dt)
    n = config.base_substeps
    times = (np.arange(n) + 0.5) * (dt / n)
    drives = sfq_pulse_shape(config, times)
    steps, _, _ = q.eig_propagators(drives, system, dt / n)
    u1 = q.ordered_product(steps)
    return u0, u1


def sfq_macro_actions(
    config: SfqConfig, system: q.ControlSystem, seed: int
) -> np.ndarray:
    """60 macro-action unitaries, each the ordered product of 500 base
    unitaries chosen by a random bit string.

    For macro-action i (1-based) the bit distribution is annealed linearly:
    Pr(bit = 0) = (count - i) / (count - 1), so action 1 is pure free
    evolution and action ``count`` is all pulses. Deterministic given seed.
    """
    u0, u1 = sfq_base_unitaries(config, system)
    rng = np.random.default_rng(seed)
    count = config.macro_action_count
    actions = np.empty((count, system.dim, system.dim), dtype=np.complex128)
    for i in range(1, count + 1):
        p_zero = (count - i) / (count - 1)
        bits = rng.random(config.block_length) >= p_zero
        u = np.eye(system.dim, dtype=np.complex128)
        for bit in bits:
            u = (u1 if bit else u0) @ u
        actions[i - 1] = u
    return actions


def make_sfq_environment(
    config: SfqConfig, system: q.ControlSystem, duration: float, seed: int
) -> TableEnvironment:
    block_time = config.block_length * config.pulse_spacing
    horizon = duration / block_time
    if abs(horizon - round(horizon)) > 1e-9:
        raise DomainError(
            f"duration {duration:g} s is not a whole number of "
            f"{block_time:g} s macro-steps"
        )
    table = sfq_macro_actions(config, system, seed)
    return TableEnvironment(table, int(round(horizon)), system.target)


# ---------------------------------------------------------------------------
# Filtered task
# ---------------------------------------------------------------------------

def _window_propagator(amplitudes, step_duration, sigma, t0, t1, n_substeps, system):
    """Propagator over [t0, t1] of the filtered waveform of ``amplitudes``."""
    dt = (t1 - t0) / n_substeps
    times = t0 + (np.arange(n_substeps) + 0.5) * dt
    weights = q.filter_weights(len(amplitudes), step_duration, sigma, times)
    drives = weights @ np.asarray(amplitudes, dtype=float)
    steps, _, _ = q.eig_propagators(drives, system, dt)
    return q.ordered_product(steps)


def filtered_pair_table(config: FilteredConfig, system: q.ControlSystem) -> np.ndarray:
    """All amplitude_levels^2 mid-window propagators, entry (i, j) covering
    [step/2, 3*step/2] of the two-step waveform (a_i, a_j)."""
    grid = amplitude_grid(config.amplitude_levels, system.max_drive)
    step = config.step_duration
    res = config.table_resolution
    dt = step / res
    times = step / 2.0 + (np.arange(res) + 0.5) * dt
    weights = q.filter_weights(2, step, config.sigma, times)  # (res, 2)

    a = config.amplitude_levels
    # drives for every (i, j) pair at each substep, shape (a*a, res)
    drives = (
        weights[:, 0][None, None, :] * grid[:, None, None]
        + weights[:, 1][None, None, :] * grid[None, :, None]
    ).reshape(a * a, res)

    u = np.broadcast_to(
        np.eye(system.dim, dtype=np.complex128), (a * a, system.dim, system.dim)
    ).copy()
    for s in range(res):
        h = system.drift[None] + drives[:, s][:, None, None] * system.control[None]
        w, v = np.linalg.eigh(h)
        steps = np.einsum("nij,nj,nkj->nik", v, np.exp(-1j * w * dt), v.conj())
        u = steps @ u
    return u.reshape(a, a, system.dim, system.dim)


def filtered_boundary_caps(config: FilteredConfig, system: q.ControlSystem):
    """(start_caps, end_caps): half-step windows of single-amplitude waveforms."""
    grid = amplitude_grid(config.amplitude_levels, system.max_drive)
    step = config.step_duration
    n = max(1, config.table_resolution // 2)
    starts = []
    ends = []
    for amp in grid:
        starts.append(
            _window_propagator([amp], step, config.sigma, 0.0, step / 2.0, n, system)
        )
        ends.append(
            _window_propagator([amp], step, config.sigma, step / 2.0, step, n, system)
        )
    return np.array(starts), np.array(ends)


def make_filtered_environment(
    config: FilteredConfig, system: q.ControlSystem, duration: float
) -> PairTableEnvironment:
    horizon = duration / config.step_duration
    if abs(horizon - round(horizon)) > 1e-9:
        raise DomainError(
            f"duration {duration:g} s is not a whole number of "
            f"{config.step_duration:g} s steps"
        )
    starts, ends = filtered_boundary_caps(config, system)
    mids = filtered_pair_table(config, system)
    env = PairTableEnvironment(starts, mids, ends, int(round(horizon)), system.target)
    env.action_amplitudes = amplitude_grid(config.amplitude_levels, system.max_drive)
    env.step_duration = config.step_duration
    return env


def filtered_episode_reference(
    config: FilteredConfig,
    system: q.ControlSystem,
    amplitudes: np.ndarray,
    resolution: int,
) -> np.ndarray:
    """Monolithic propagation of a full filtered episode (no window
    truncation); the accuracy reference for the pair-table assembly."""
    return q.filtered_unitary(
        amplitudes, config.step_duration, config.sigma, resolution, system
    )


# ---------------------------------------------------------------------------
# Piecewise-constant task
# ---------------------------------------------------------------------------

def make_pwc_environment(
    config: PwcConfig, system: q.ControlSystem, duration: float
) -> TableEnvironment:
    horizon = duration / config.step_duration
    if abs(horizon - round(horizon)) > 1e-9:
        raise DomainError(
            f"duration {duration:g} s is not a whole number of "
            f"{config.step_duration:g} s steps"
        )
    grid = amplitude_grid(config.amplitude_levels, system.max_drive)
    steps, _, _ = q.eig_propagators(grid, system, config.step_duration)
    env = TableEnvironment(steps, int(round(horizon)), system.target)
    env.action_amplitudes = grid
    env.step_duration = config.step_duration
    return env


# ---------------------------------------------------------------------------
# Toy tasks (small enough for exhaustive oracles)
# ---------------------------------------------------------------------------

def toy_x_gate_environment(
    n_steps: int = 10,
    step_duration: float = 2.0e-9,
    amplitude_levels: int = 60,
    max_drive: float = q.TWO_PI * 1.0e9,
) -> TableEnvironment:
    """Single resonantly driven qubit, X-gate target, PWC amplitudes."""
    system = q.resonant_qubit_system(max_drive)
    config = PwcConfig(step_duration=step_duration, amplitude_levels=amplitude_levels)
    return make_pwc_environment(config, system, n_steps * step_duration)


#: Single-qubit digital toy: per slot either a bare z rotation or z plus a
#: tilted kick. The y component breaks time-reversal symmetry so the 8-slot
#: landscape has a unique optimum (and 9 one-flip local optima, per the
#: enumeration tests).
TOY_DIGITAL_Z_ANGLE = 0.20
TOY_DIGITAL_X_ANGLE = 0.45
TOY_DIGITAL_Y_ANGLE = 0.14


def toy_digital_environment(horizon: int = 8) -> TableEnvironment:
    u0 = q.expm_hermitian(TOY_DIGITAL_Z_ANGLE * q.PAULI_Z, 1.0)
    u1 = q.expm_hermitian(
        TOY_DIGITAL_Z_ANGLE * q.PAULI_Z
        + TOY_DIGITAL_X_ANGLE * q.PAULI_X
        + TOY_DIGITAL_Y_ANGLE * q.PAULI_Y,
        1.0,
    )
    return TableEnvironment(np.array([u0, u1]), horizon, q.PAULI_X)


def toy_digital_objective(horizon: int = 8):
    """(objective, n_bits): bit-string fidelity function of the digital toy."""
    env = toy_digital_environment(horizon)

    def objective(bits) -> float:
        return env.sequence_fidelity(np.asarray(bits, dtype=int))

    return objective, horizon


# ---------------------------------------------------------------------------
# Table caching
# ---------------------------------------------------------------------------

def table_cache_key(*parts) -> str:
    """Stable hash identifying a precomputed-table configuration."""
    digest = hashlib.sha256()
    digest.update(f"v{TABLE_CACHE_VERSION}".encode())
    for part in parts:
        digest.update(repr(part).encode())
    return digest.hexdigest()


def save_unitary_table(path, table: np.ndarray, key: str) -> None:
    np.savez_compressed(path, table=table, key=np.array(key), version=np.array(TABLE_CACHE_VERSION))


def load_unitary_table(path, key: str) -> np.ndarray:
    with np.load(path) as data:
        if str(data["key"]) != key or int(data["version"]) != TABLE_CACHE_VERSION:
            raise InvalidInputError("cached table does not match the requested configuration")
        return data["table"]
