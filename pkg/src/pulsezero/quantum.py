"""Dense complex linear algebra for driven transmon dynamics.

Everything downstream (environments, tree search, GRAPE, metrics) funnels
through this module: Hamiltonian construction, unitary propagation, the
state-averaged gate fidelity, and Gaussian pulse filtering.

Conventions, fixed project-wide:
  * matrices are dense ``complex128`` ndarrays in row-major order;
  * angular frequencies in rad/s, times in seconds;
  * time-ordered products compose on the left, ``U(T) = U_N @ ... @ U_1``;
  * transmon 1 is the first tensor factor, ``b1 = kron(b, I)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm as _expm_general
from scipy.special import erf

from .errors import DimensionError, DomainError, InvalidInputError, NumericalFailureError

#: Largest tolerated value of ``max|U†U - I|`` for anything called a unitary.
UNITARITY_TOL = 1e-10

TWO_PI = 2.0 * np.pi

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=np.complex128)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)


@dataclass(frozen=True)
class SystemParameters:
    """Effective two-transmon model: detuned qubit 1 exchange-coupled to
    qubit 2, with a real drive on qubit 1.

    detuning, coupling and max_drive are angular frequencies (rad/s).
    """

    detuning: float
    coupling: float
    max_drive: float
    levels_per_transmon: int = 2

    def __post_init__(self):
        if not (self.detuning > 0 and self.coupling > 0 and self.max_drive > 0):
            raise DomainError("detuning, coupling and max_drive must be positive")
        if self.levels_per_transmon < 2:
            raise DomainError("levels_per_transmon must be at least 2")

    @property
    def dim(self) -> int:
        return self.levels_per_transmon**2


#: Typical fixed-frequency cross-resonance values: J/2pi = 5 MHz,
#: Delta/2pi = 0.35 GHz, drive amplitude limited to Omega_max/2pi = 1.0 GHz.
CROSS_RESONANCE = SystemParameters(
    detuning=TWO_PI * 0.35e9,
    coupling=TWO_PI * 5e6,
    max_drive=TWO_PI * 1.0e9,
)


@dataclass(frozen=True)
class PulseSequence:
    """Piecewise-constant control waveform: one amplitude per time bin."""

    amplitudes: np.ndarray
    step_duration: float

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        if amps.ndim != 1 or amps.size < 1:
            raise InvalidInputError("amplitudes must be a non-empty 1-D array")
        if not np.all(np.isfinite(amps)):
            raise InvalidInputError("amplitudes must be finite")
        if not self.step_duration > 0:
            raise DomainError("step_duration must be positive")
        amps = amps.copy()
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def __len__(self) -> int:
        return self.amplitudes.size

    @property
    def total_duration(self) -> float:
        return len(self) * self.step_duration

    def reversed(self) -> "PulseSequence":
        return PulseSequence(self.amplitudes[::-1], self.step_duration)


# ---------------------------------------------------------------------------
# Operators and Hamiltonians
# ---------------------------------------------------------------------------

def lowering_operator(levels: int) -> np.ndarray:
    """Truncated bosonic lowering operator b with b|n> = sqrt(n)|n-1>."""
    if levels < 2:
        raise DomainError("need at least two levels")
    return np.diag(np.sqrt(np.arange(1, levels, dtype=float)), k=1).astype(np.complex128)


def drift_hamiltonian(params: SystemParameters) -> np.ndarray:
    """Drive-free part: detuning on transmon 1 plus the exchange coupling."""
    levels = params.levels_per_transmon
    b = lowering_operator(levels)
    eye = np.eye(levels, dtype=np.complex128)
    b1 = np.kron(b, eye)
    b2 = np.kron(eye, b)
    return (
        params.detuning * (b1.conj().T @ b1)
        + params.coupling * (b1.conj().T @ b2 + b1 @ b2.conj().T)
    )


def control_operator(params: SystemParameters) -> np.ndarray:
    """Drive operator b1† + b1 on the tensor-product space."""
    levels = params.levels_per_transmon
    b = lowering_operator(levels)
    return np.kron(b.conj().T + b, np.eye(levels, dtype=np.complex128))


def build_hamiltonian(params: SystemParameters, drive: float) -> np.ndarray:
    """Full Hamiltonian  Delta*b1†b1 + J*(b1†b2 + b1b2†) + Omega*(b1† + b1).

    All three terms are real symmetric, so the result is exactly Hermitian.
    The drive must lie within [0, max_drive].
    """
    if not (0.0 <= drive <= params.max_drive):
        raise DomainError(
            f"drive {drive:g} outside [0, {params.max_drive:g}] rad/s"
        )
    return drift_hamiltonian(params) + drive * control_operator(params)


@dataclass(frozen=True)
class ControlSystem:
    """A single-drive control problem: H(w) = drift + w * control.

    ``target`` is the unitary the pulse should realize; ``max_drive`` bounds
    the admissible drive amplitude.
    """

    drift: np.ndarray
    control: np.ndarray
    max_drive: float
    target: np.ndarray

    def __post_init__(self):
        for name in ("drift", "control", "target"):
            m = np.asarray(getattr(self, name), dtype=np.complex128)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise DimensionError(f"{name} must be a square matrix")
            m = m.copy()
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        if self.drift.shape != self.control.shape or self.drift.shape != self.target.shape:
            raise DimensionError("drift, control and target dimensions must agree")
        if not self.max_drive > 0:
            raise DomainError("max_drive must be positive")

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    def hamiltonian(self, drive: float) -> np.ndarray:
        # No bound check here: optimizer internals (e.g. finite differences)
        # may probe slightly outside the box.
        return self.drift + drive * self.control


def cross_resonance_system(params: SystemParameters = CROSS_RESONANCE) -> ControlSystem:
    """The two-transmon cross-resonance problem targeting sqrt(ZX)."""
    return ControlSystem(
        drift=drift_hamiltonian(params),
        control=control_operator(params),
        max_drive=params.max_drive,
        target=build_target_sqrt_zx(params.levels_per_transmon),
    )


def resonant_qubit_system(max_drive: float) -> ControlSystem:
    """Single resonantly driven qubit targeting an X gate (toy problem)."""
    return ControlSystem(
        drift=np.zeros((2, 2), dtype=np.complex128),
        control=PAULI_X,
        max_drive=max_drive,
        target=PAULI_X,
    )


def build_target_sqrt_zx(levels_per_transmon: int = 2) -> np.ndarray:
    """exp(-i*(pi/4)*Z⊗X) on the computational subspace, identity elsewhere.

    Z⊗X squares to the identity, so the exponential is
    cos(pi/4)*I - i*sin(pi/4)*Z⊗X; the generator is real symmetric, which
    makes the gate symmetric under transposition.
    """
    gen = np.kron(PAULI_Z, PAULI_X)
    block = np.cos(np.pi / 4) * np.eye(4) - 1j * np.sin(np.pi / 4) * gen
    levels = levels_per_transmon
    if levels == 2:
        return block.astype(np.complex128)
    dim = levels**2
    target = np.eye(dim, dtype=np.complex128)
    comp = [0, 1, levels, levels + 1]  # |00>, |01>, |10>, |11>
    target[np.ix_(comp, comp)] = block
    return target


# ---------------------------------------------------------------------------
# Exponentials and propagation
# ---------------------------------------------------------------------------

def _require_square(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what} must be square, got shape {a.shape}")
    return a


def expm_hermitian(h: np.ndarray, dt: float = 1.0) -> np.ndarray:  # noqa: D401
    """exp(-i*h*dt) for Hermitian h via eigendecomposition (exactly unitary
    up to the accuracy of eigh)."""
    h = _require_square(h, "Hamiltonian")
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * w * dt)
    return (v * phases) @ v.conj().T


def matrix_exponential(a: np.ndarray) -> np.ndarray:
    """exp(a) for a square complex matrix.

    Anti-Hermitian inputs (the propagation case, a = -i*H*dt) are detected
    and routed through the eigendecomposition of the Hermitian generator;
    everything else falls back to scipy's Pade-based expm.
    """
    a = _require_square(a)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix contains NaN or Inf entries")
    a = a.astype(np.complex128, copy=False)
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a + a.conj().T).max() <= 1e-12 * scale:
        h = 1j * a
        h = (h + h.conj().T) / 2.0
        return expm_hermitian(h, 1.0)
    return _expm_general(a)


def unitarity_defect(u: np.ndarray) -> float:
    """max|U†U - I|, the project-wide unitarity measure."""
    u = np.asarray(u)
    return float(np.abs(u.conj().T @ u - np.eye(u.shape[0])).max())


def assert_unitary(u: np.ndarray, tol: float = UNITARITY_TOL) -> None:
    defect = unitarity_defect(u)
    if defect > tol:
        raise NumericalFailureError(f"unitarity defect {defect:.3e} exceeds {tol:.1e}")


def propagate(u: np.ndarray, h: np.ndarray, dt: float) -> np.ndarray:
    """One Schrödinger step: returns exp(-i*h*dt) @ u."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    u = _require_square(np.asarray(u, dtype=np.complex128), "state unitary")
    h = _require_square(h, "Hamiltonian")
    if u.shape != h.shape:
        raise DimensionError(f"state {u.shape} and Hamiltonian {h.shape} differ")
    out = expm_hermitian(h, dt) @ u
    if unitarity_defect(out) > 1e-8:
        raise NumericalFailureError("propagation broke unitarity beyond 1e-8")
    return out


def fidelity(u: np.ndarray, u_target: np.ndarray) -> float:
    """State-averaged overlap fidelity |Tr(U† U_target)/dim|^2.

    Invariant under a global phase of either argument.
    """
    u = _require_square(np.asarray(u), "unitary")
    u_target = _require_square(np.asarray(u_target), "target")
    if u.shape != u_target.shape:
        raise DimensionError(f"dimension mismatch: {u.shape} vs {u_target.shape}")
    dim = u.shape[0]
    overlap = np.trace(u.conj().T @ u_target) / dim
    return float(np.abs(overlap) ** 2)


def infidelity(u: np.ndarray, u_target: np.ndarray) -> float:
    return 1.0 - fidelity(u, u_target)


# ---------------------------------------------------------------------------
# Batched propagators for piecewise-constant drives
# ---------------------------------------------------------------------------

def eig_propagators(drives: np.ndarray, system: ControlSystem, dt: float):
    """Per-substep propagators exp(-i*H(w_s)*dt) for a vector of drives.

    Returns (steps, eigvals, eigvecs) with shapes (S,d,d), (S,d), (S,d,d);
    the eigensystems feed the exact gradient of the exponential.
    """
    drives = np.asarray(drives, dtype=float)
    h = system.drift[None, :, :] + drives[:, None, None] * system.control[None, :, :]
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * w * dt)
    steps = np.einsum("sij,sj,skj->sik", v, phases, v.conj())
    return steps, w, v


def ordered_product(steps: np.ndarray) -> np.ndarray:
    """Time-ordered product steps[-1] @ ... @ steps[0]."""
    u = np.eye(steps.shape[-1], dtype=np.complex128)
    for s in steps:
        u = s @ u
    return u


def pwc_unitary(amplitudes: np.ndarray, step_duration: float, system: ControlSystem) -> np.ndarray:
    """Evolution under an unfiltered piecewise-constant pulse."""
    steps, _, _ = eig_propagators(np.asarray(amplitudes, dtype=float), system, step_duration)
    return ordered_product(steps)


# ---------------------------------------------------------------------------
# Gaussian filtering
# ---------------------------------------------------------------------------

def filter_sample_times(n_steps: int, step_duration: float, resolution: int) -> np.ndarray:
    """Midpoints of the substeps subdividing each original step."""
    if resolution < 1:
        raise DomainError("resolution must be at least 1")
    total = n_steps * resolution
    return (np.arange(total) + 0.5) * (step_duration / resolution)


def filter_weights(
    n_steps: int, step_duration: float, sigma: float, sample_times: np.ndarray
) -> np.ndarray:
    """Row-stochastic-up-to-truncation matrix W with filtered(t_s) = W @ amplitudes.

    The kernel exp(-(t-t')^2/sigma^2) is normalized by its integral
    sigma*sqrt(pi) so constants map to constants; the pulse is extended by
    zero outside [0, T], so rows near the boundary sum to less than one.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    edges = np.arange(n_steps + 1) * step_duration
    table = erf((sample_times[:, None] - edges[None, :]) / sigma)
    return 0.5 * (table[:, :-1] - table[:, 1:])


def gaussian_filter(
    amplitudes: np.ndarray, step_duration: float, sigma: float, resolution: int
) -> np.ndarray:
    """Convolve a piecewise-constant pulse with the normalized Gaussian kernel.

    Returns the filtered waveform sampled at ``resolution`` substep midpoints
    per original step. Samples are convex-ish combinations of the input
    amplitudes and zero, so they stay inside [0, max(amplitudes)].
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    times = filter_sample_times(amplitudes.size, step_duration, resolution)
    w = filter_weights(amplitudes.size, step_duration, sigma, times)
    return w @ amplitudes


def filtered_unitary(
    amplitudes: np.ndarray,
    step_duration: float,
    sigma: float,
    resolution: int,
    system: ControlSystem,
) -> np.ndarray:
    """Evolution under the Gaussian-filtered pulse, with the filtered
    waveform held constant within each of the ``resolution`` substeps."""
    drives = gaussian_filter(amplitudes, step_duration, sigma, resolution)
    steps, _, _ = eig_propagators(drives, system, step_duration / resolution)
    return ordered_product(steps)


def discretization_error(
    amplitudes: np.ndarray,
    step_duration: float,
    sigma: float,
    resolution: int,
    system: ControlSystem,
    reference_resolution: int | None = None,
) -> float:
    """Infidelity between the filtered unitary at ``resolution`` and a
    high-resolution reference (default 4x)."""
    if resolution < 1:
        raise DomainError("resolution must be at least 1")
    if reference_resolution is None:
        reference_resolution = 4 * resolution
    u = filtered_unitary(amplitudes, step_duration, sigma, resolution, system)
    u_ref = filtered_unitary(amplitudes, step_duration, sigma, reference_resolution, system)
    return 1.0 - fidelity(u, u_ref)


def discretization_error_curve(
    amplitudes: np.ndarray,
    step_duration: float,
    sigma: float,
    resolutions: list[int],
    system: ControlSystem,
    reference_factor: int = 4,
) -> np.ndarray:
    """Discretization error at each resolution against a shared reference
    built at ``reference_factor`` times the largest tested resolution."""
    reference = reference_factor * max(resolutions)
    u_ref = filtered_unitary(amplitudes, step_duration, sigma, reference, system)
    errors = []
    for res in resolutions:
        u = filtered_unitary(amplitudes, step_duration, sigma, res, system)
        errors.append(1.0 - fidelity(u, u_ref))
    return np.asarray(errors)


# ---------------------------------------------------------------------------
# Debugging
# ---------------------------------------------------------------------------

def dump_matrix(m: np.ndarray, path) -> None:
    """Write a matrix as text, one entry per line: ``row col re im``."""
    m = np.asarray(m, dtype=np.complex128)
    with open(path, "w") as fh:
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                fh.write(f"{i} {j} {m[i, j].real:.17g} {m[i, j].imag:.17g}\n")
