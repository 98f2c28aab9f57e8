"""Post-run metrics and solution-set handling: the pulse time-asymmetry
measure, success fractions, learning curves, duration sweeps, and CSV
export of final pulse vectors for external embedding tools."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ExportError, InvalidInputError
from .quantum import PulseSequence


def asymmetry(amplitudes) -> float:
    """Root-mean-square deviation of a pulse from its time reversal,
    C = (1/N) * sqrt(sum_j |w_j - w_{N+1-j}|^2); zero iff palindromic."""
    amps = np.asarray(amplitudes, dtype=float)
    if amps.ndim != 1 or amps.size < 1:
        raise InvalidInputError("amplitudes must be a non-empty 1-D array")
    return float(np.linalg.norm(amps - amps[::-1]) / amps.size)


def success_fraction(infidelities) -> float:
    """Fraction of runs with infidelity within four times the lowest one."""
    arr = np.asarray(infidelities, dtype=float)
    if arr.size == 0:
        raise DomainError("need at least one infidelity")
    return float(np.mean(arr <= 4.0 * arr.min()))


@dataclass(frozen=True)
class LearningCurve:
    wall_time: np.ndarray
    infidelity: np.ndarray
    envelope: np.ndarray  # best-so-far (cumulative minimum)


def learning_curve(records) -> LearningCurve:
    """Raw per-record (wall time, infidelity) points plus the cumulative
    minimum envelope. Record timestamps must be monotone."""
    records = list(records)
    if not records:
        raise DomainError("no records")
    times = np.array([r.wall_time_s for r in records])
    if np.any(np.diff(times) < 0):
        raise InvalidInputError("record timestamps must be monotone")
    infidelities = np.array([r.infidelity for r in records])
    return LearningCurve(times, infidelities, np.minimum.accumulate(infidelities))


@dataclass(frozen=True)
class SweepRow:
    duration: float
    best_infidelity: float
    success_fraction: float
    record_count: int


def duration_sweep(optimizer, durations, budget) -> list[SweepRow]:
    """Run ``optimizer(duration, budget)`` per duration and tabulate the best
    infidelity, the success fraction and the record count. Durations must be
    positive, ascending and free of duplicates; non-monotonicity of the
    results themselves (e.g. near a speed limit) is reported, not enforced."""
    durations = list(durations)
    if not durations:
        raise DomainError("need at least one duration")
    if any(d <= 0 for d in durations):
        raise DomainError("durations must be positive")
    if any(b <= a for a, b in zip(durations, durations[1:])):
        raise DomainError("durations must be strictly ascending (no duplicates)")
    rows = []
    for duration in durations:
        records = list(optimizer(duration, budget))
        infidelities = [r.infidelity for r in records]
        rows.append(
            SweepRow(
                duration=duration,
                best_infidelity=min(infidelities) if infidelities else float("nan"),
                success_fraction=success_fraction(infidelities) if infidelities else float("nan"),
                record_count=len(records),
            )
        )
    return rows


def symmetry_trajectory(records) -> np.ndarray:
    """(iteration, infidelity, asymmetry) triples for records carrying
    pulses; the iteration index is the color axis of trajectory plots."""
    records = list(records)
    triples = np.empty((len(records), 3))
    for k, record in enumerate(records):
        if record.pulse is None:
            raise InvalidInputError(f"record {record.index} has no pulse attached")
        triples[k] = (record.index, record.infidelity, asymmetry(record.pulse))
    return triples


# ---------------------------------------------------------------------------
# Solution sets and CSV interchange
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolutionEntry:
    pulse: PulseSequence
    infidelity: float
    tag: str
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.infidelity <= 1.0:
            raise InvalidInputError("infidelity must lie in [0, 1]")


@dataclass
class SolutionSet:
    """Final pulse vectors of one task, normalized on export by max_drive."""

    max_drive: float
    entries: list[SolutionEntry] = field(default_factory=list)

    def add(self, pulse: PulseSequence, infidelity: float, tag: str, seed: int):
        self.entries.append(SolutionEntry(pulse, float(infidelity), tag, int(seed)))

    def __len__(self):
        return len(self.entries)


def solution_set_from_records(records, step_duration, max_drive, tag=None) -> SolutionSet:
    out = SolutionSet(max_drive)
    for record in records:
        if record.pulse is None:
            continue
        out.add(
            PulseSequence(record.pulse, step_duration),
            min(max(record.infidelity, 0.0), 1.0),
            tag if tag is not None else record.optimizer,
            record.seed,
        )
    return out


def export_solutions(solutions: SolutionSet, path) -> None:
    """One pulse per row: amplitudes normalized by max_drive, then
    infidelity, tag, seed. All floats at 17 significant digits."""
    if not solutions.entries:
        raise ExportError("solution set is empty")
    lengths = {len(e.pulse) for e in solutions.entries}
    if len(lengths) != 1:
        raise ExportError(f"mixed pulse lengths {sorted(lengths)} cannot be exported")
    durations = {e.pulse.step_duration for e in solutions.entries}
    if len(durations) != 1:
        raise ExportError("mixed step durations cannot be exported")
    n = lengths.pop()
    with open(path, "w") as fh:
        fh.write(
            f"# pulsezero solutions: amp_0..amp_{n - 1} normalized by "
            f"max_drive, then infidelity, tag, seed\n"
        )
        fh.write(f"# max_drive_rad_s={solutions.max_drive:.17g}\n")
        fh.write(f"# step_duration_s={durations.pop():.17g}\n")
        fh.write(",".join([f"amp_{i}" for i in range(n)] + ["infidelity", "tag", "seed"]) + "\n")
        for entry in solutions.entries:
            normalized = entry.pulse.amplitudes / solutions.max_drive
            cells = [f"{a:.17g}" for a in normalized]
            cells += [f"{entry.infidelity:.17g}", entry.tag, str(entry.seed)]
            fh.write(",".join(cells) + "\n")


def import_solutions(path) -> SolutionSet:
    max_drive = None
    step_duration = None
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if token.startswith("max_drive_rad_s="):
                        max_drive = float(token.split("=", 1)[1])
                    elif token.startswith("step_duration_s="):
                        step_duration = float(token.split("=", 1)[1])
                continue
            if line.startswith("amp_0"):
                continue
            cells = line.split(",")
            amps = np.array([float(c) for c in cells[:-3]])
            entries.append((amps, float(cells[-3]), cells[-2], int(cells[-1])))
    if max_drive is None or step_duration is None:
        raise ExportError("solutions CSV is missing max_drive/step_duration headers")
    out = SolutionSet(max_drive)
    for amps, infid, tag, seed in entries:
        out.add(PulseSequence(amps * max_drive, step_duration), infid, tag, seed)
    return out
