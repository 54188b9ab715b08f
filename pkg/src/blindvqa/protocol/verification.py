"""Escape probabilities of Pauli attacks against randomly placed traps."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .. import adqc, patterns, qsim
from ..patterns import COMPUTE, X_TRAP, Z_TRAP
from ..qsim import MeasBasis, Statevector
from .roles import AttackSpec, PauliAttackServer, adversary_apply
from .run import run_delegation

TWO_THIRDS = 2.0 / 3.0
# Paulis that leave each trap kind's eigenstate intact
HARMLESS = {Z_TRAP: ("I", "Z"), X_TRAP: ("I", "X")}


def role_counts(n_wires: int) -> tuple[int, int, int]:
    """(compute, Z-trap, X-trap) wire counts for a pattern with ``n_wires`` wires."""
    if n_wires < 4 or n_wires % 2:
        raise ValueError("wire counts are even and at least 4")
    w = n_wires // 3
    if patterns.wire_count(w) != n_wires:
        raise ValueError(f"no compute width yields {n_wires} wires")
    return w, n_wires - 2 * w, w


def species_bound(attack: AttackSpec) -> float:
    """``(2/3)^{|a|/3}``, or ``(1/3)^{|a|/3}`` for an attack made only of XZ."""
    base = 1.0 / 3.0 if attack.species == "XZ" else TWO_THIRDS
    return base ** (attack.weight / 3.0)


def aggregate_bound(weights) -> float:
    """Joint escape bound ``(2/3)^{sum |a| / 3}`` over independent repetitions."""
    return TWO_THIRDS ** (float(np.sum(weights)) / 3.0)


def _escapes(kinds: np.ndarray, attack: AttackSpec) -> np.ndarray:
    """Boolean escape flags for role assignments ``kinds[..., wire]``."""
    ok = np.ones(kinds.shape[:-1], dtype=bool)
    for q, p in enumerate(attack.paulis):
        k = kinds[..., q]
        ok &= (k == COMPUTE) | ((k == Z_TRAP) & (p in HARMLESS[Z_TRAP])) | ((k == X_TRAP) & (p in HARMLESS[X_TRAP]))
    return ok


def role_assignments(n_wires: int, *, paired: bool = False) -> np.ndarray:
    """Every distinct placement of compute/Z/X roles on the physical wires.

    With ``paired=True`` (two compute wires only) the compute wires must
    occupy one brick pair ``(2i, 2i+1)``.  All rows are equally likely under
    the corresponding permutation sampler.
    """
    w, nz, nx = role_counts(n_wires)
    rows = []
    for comp in itertools.combinations(range(n_wires), w):
        if paired and not (w == 2 and comp[0] % 2 == 0 and comp[1] == comp[0] + 1):
            continue
        rest = [q for q in range(n_wires) if q not in comp]
        for zs in itertools.combinations(rest, nz):
            row = np.full(n_wires, X_TRAP, dtype=np.int8)
            row[list(comp)] = COMPUTE
            row[list(zs)] = Z_TRAP
            rows.append(row)
    if not rows:
        raise ValueError("the paired constraint needs exactly two compute wires")
    return np.array(rows)


def escape_probability_enumerated(attack: AttackSpec, *, paired: bool = False) -> float:
    """Exact escape probability by counting role assignments."""
    kinds = role_assignments(attack.n_wires, paired=paired)
    return float(_escapes(kinds, attack).mean())


def escape_probability_exact(n_wires: int, attack: AttackSpec | tuple[int, int, int], *, paired: bool = False) -> float:
    """Probability that a Pauli attack leaves every trap intact.

    Single-species attacks on ``N = 3w`` wires use the closed forms
    ``C(2N/3, a)/C(N, a)`` (X or Z) and ``C(N/3, c)/C(N, c)`` (XZ).  Mixed
    attacks, padded wire counts and the paired constraint are counted
    exactly over all role assignments.
    """
    if isinstance(attack, tuple):
        attack = AttackSpec.from_counts(n_wires, *attack)
    if attack.n_wires != n_wires:
        raise ValueError("attack length differs from the wire count")
    role_counts(n_wires)
    species = attack.species
    if paired or n_wires % 3 or species is None and attack.weight:
        return escape_probability_enumerated(attack, paired=paired)
    if attack.weight == 0:
        return 1.0
    m = attack.weight
    keep = n_wires // 3 if species == "XZ" else 2 * n_wires // 3
    return comb(keep, m) / comb(n_wires, m)


@dataclass(frozen=True)
class DetectionResult:
    n_wires: int
    weight: int
    trials: int
    escapes: int
    bound: float
    exact: float

    @property
    def escape_rate(self) -> float:
        return self.escapes / self.trials

    @property
    def stderr(self) -> float:
        p = self.exact
        return float(np.sqrt(max(p * (1 - p), 0.0) / self.trials))

    def aggregate_bound(self, repetitions: int) -> float:
        return aggregate_bound([self.weight] * repetitions)


def _logical_kinds(n_wires: int) -> np.ndarray:
    w, nz, nx = role_counts(n_wires)
    return np.array([COMPUTE] * w + [Z_TRAP] * nz + [X_TRAP] * nx)


def _ideal_escapes(n_wires: int, attack: AttackSpec, trials: int, rng) -> np.ndarray:
    """Traps prepared in their eigenstates, a fresh uniform permutation per
    trial, a random Pauli frame, the attack, and a measurement in each trap's
    basis.  Wires are independent, so each is simulated on its own."""
    kinds = _logical_kinds(n_wires)
    perm = np.argsort(rng.random((trials, n_wires)), axis=1)
    gates = attack.gates()
    ok = np.ones(trials, dtype=bool)
    for l, kind in enumerate(kinds):
        if kind == COMPUTE:
            continue
        ket = qsim.KET0 if kind == Z_TRAP else qsim.KET_PLUS
        fx = rng.integers(0, 2, size=trials)
        fz = rng.integers(0, 2, size=trials)
        frame = np.where(fx[:, None, None], qsim.X, qsim.I2) @ np.where(fz[:, None, None], qsim.Z, qsim.I2)
        state = qsim.apply_1q(Statevector(np.tile(ket, (trials, 1))), frame, 0, check=False)
        state = qsim.apply_1q(state, gates[perm[:, l]], 0, check=False)
        basis = MeasBasis.z() if kind == Z_TRAP else MeasBasis.x()
        bits, _ = qsim.measure(state, 0, basis, rng)
        flip = fx if kind == Z_TRAP else fz
        ok &= (bits ^ flip.astype(np.uint8)) == 0
    return ok


def _protocol_escapes(attack: AttackSpec, trials: int, rng, chunk: int) -> np.ndarray:
    w = attack.n_wires // 3
    source = patterns.SourceCircuit(w, tuple(patterns.Gate("h", (q,)) for q in range(w)))
    server = PauliAttackServer(attack)
    out = []
    for start in range(0, trials, chunk):
        batch = min(chunk, trials - start)
        pattern, secrets = patterns.compile(source, rng, batch=batch)
        out.append(run_delegation(pattern, secrets, server, adqc.LossyChannel(0.0, rng), rng).accepted)
    return np.concatenate(out)


def detection_experiment(
    n_wires: int,
    attack: AttackSpec,
    trials: int,
    rng: np.random.Generator,
    *,
    model: str = "ideal",
    chunk: int = 2000,
) -> DetectionResult:
    """Monte Carlo escape rate of ``attack``.

    ``model='ideal'`` draws a uniform permutation per trial and simulates the
    honest trap outputs directly.  ``model='protocol'`` compiles a small
    circuit and runs full delegations against a :class:`PauliAttackServer`;
    its permutation follows the compiler's layout, so ``exact`` is then
    evaluated with the matching constraint.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if attack.n_wires != n_wires:
        raise ValueError("attack length differs from the wire count")
    if model == "ideal":
        ok = _ideal_escapes(n_wires, attack, trials, rng)
        exact = escape_probability_exact(n_wires, attack)
    elif model == "protocol":
        ok = _protocol_escapes(attack, trials, rng, chunk)
        paired = n_wires // 3 == 2
        exact = escape_probability_enumerated(attack, paired=paired)
    else:
        raise ValueError(f"unknown model {model!r}")
    return DetectionResult(n_wires, attack.weight, trials, int(ok.sum()), species_bound(attack), exact)


__all__ = [
    "DetectionResult",
    "aggregate_bound",
    "adversary_apply",
    "detection_experiment",
    "escape_probability_enumerated",
    "escape_probability_exact",
    "role_assignments",
    "species_bound",
]
