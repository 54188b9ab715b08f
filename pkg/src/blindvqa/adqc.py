"""Ancilla-driven J(phi) gadget with Bell-pair delivery, Pauli frames and loss.

The gadget realises ``J(phi) = H RZ(phi)`` on one register wire.  The server
couples three ancillas to the wire with ``(H_R ⊗ I)CX_{RA}``:

* ``A1``: the server-held half of a Bell pair whose other half the client
  measured in ``M(-k pi/4)``; measured in Z, giving ``s1``.
* ``A2 = |+>``: measured in Z, giving ``s2`` (never used downstream).
* ``A3 = |0>``: measured in ``M(phi')``, giving ``s3``.

With ``phi'`` from :func:`encrypted_angle` the wire ends in
``X^{s3 xor r} H RZ(phi) |psi>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable

import numpy as np

from . import qsim
from .qsim import MeasBasis, Register, Statevector

TWO_PI = 2.0 * np.pi
QUARTER_PI = np.pi / 4.0
MAX_ATTEMPTS = 10**6
ANCILLAS = ("A1", "A2", "A3")


class ChannelFault(RuntimeError):
    """A transmission needed more attempts than the channel allows."""


def bell_pair(batch: int = 1) -> Statevector:
    """``(|00> + |11>)/sqrt(2)``; wire 0 stays with the server, wire 1 travels."""
    amps = np.zeros((batch, 4), dtype=complex)
    amps[:, 0] = amps[:, 3] = qsim.SQRT1_2
    return Statevector(amps)


_BELL = bell_pair().vector()


def client_bell_measure(
    bell_half: Statevector, k, rng, *, forced=None, check: bool = False
) -> tuple[np.ndarray, Statevector]:
    """Client measures the travelling half of a Bell pair in ``M(-k pi/4)``.

    Returns the outcome ``s0`` and the remaining server-side qubit, which is
    ``Z^{s0} RZ(k pi/4)|+>`` up to a global phase.
    """
    k = np.asarray(k)
    if np.any((k < 0) | (k > 7)):
        raise ValueError("k must lie in {0, ..., 7}")
    if check:
        fid = np.abs(bell_half.amps @ np.conj(_BELL)) ** 2
        if bell_half.n_qubits != 2 or np.any(fid < 1 - 1e-10):
            raise ValueError("input is not the Bell state (|00> + |11>)/sqrt(2)")
    basis = MeasBasis.m(-k * QUARTER_PI)
    return qsim.measure(bell_half, 1, basis, rng, forced=forced, discard=True)


def encrypted_angle(phi, s1, k, s0, r):
    """Masked angle ``-phi + (-1)^s1 (k/4 + s0) pi + r pi`` reduced to ``[0, 2pi)``."""
    sign = 1 - 2 * np.asarray(s1, dtype=float)
    raw = -np.asarray(phi, dtype=float) + sign * (np.asarray(k) / 4.0 + np.asarray(s0)) * np.pi
    raw = raw + np.asarray(r) * np.pi
    out = np.mod(raw, TWO_PI)
    out = np.where(np.isclose(out, TWO_PI, rtol=0, atol=1e-12), 0.0, out)
    return float(out) if out.ndim == 0 else out


def encrypted_angle_units(phi_units, s1, k, s0, r):
    """Integer version of :func:`encrypted_angle` in units of pi/4 (mod 8)."""
    sign = 1 - 2 * np.asarray(s1)
    return np.mod(-np.asarray(phi_units) + sign * (np.asarray(k) + 4 * np.asarray(s0)) + 4 * np.asarray(r), 8)


@dataclass
class GadgetSecrets:
    """Client-side randomness of one gadget (arrays over repetitions)."""

    k: np.ndarray
    r: np.ndarray
    s0: np.ndarray | None = None

    @classmethod
    def draw(cls, rng: np.random.Generator, batch: int = 1) -> GadgetSecrets:
        return cls(k=rng.integers(0, 8, size=batch), r=rng.integers(0, 2, size=batch).astype(np.uint8))


@dataclass
class GadgetOutcome:
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    byproduct_x: np.ndarray

    @classmethod
    def from_bits(cls, s1, s2, s3, r) -> GadgetOutcome:
        s3 = np.asarray(s3, dtype=np.uint8)
        return cls(np.asarray(s1, dtype=np.uint8), np.asarray(s2, dtype=np.uint8), s3, s3 ^ np.asarray(r, dtype=np.uint8))


def attach_ancillas(reg: Register, a1: Statevector) -> None:
    """Append ``A1`` (server half of the Bell pair), ``A2 = |+>`` and ``A3 = |0>``."""
    reg.add_block(["A1"], a1)
    reg.add_qubit("A2", qsim.KET_PLUS)
    reg.add_qubit("A3", qsim.KET0)


def couple_and_measure(reg: Register, wire: Hashable, ancilla: Hashable, basis: MeasBasis, rng, *, forced=None) -> np.ndarray:
    """Fixed coupling ``(H_R ⊗ I)CX_{R,anc}`` then measure and drop the ancilla."""
    reg.apply_2q("CX", wire, ancilla)
    reg.apply_1q(wire, qsim.H, check=False)
    return reg.measure(ancilla, basis, rng, forced=forced, discard=True)


def run_j_gadget(
    reg: Register,
    wire: Hashable,
    phi_prime: float | np.ndarray | Callable[[np.ndarray, np.ndarray], np.ndarray],
    rng,
    *,
    forced: tuple | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Server side of one gadget on ``wire``; ancillas must already be attached.

    ``phi_prime`` is either the encrypted angle or a callback receiving
    ``(s1, s2)`` and returning it, which is how the client answers in the
    live protocol.  ``forced`` optionally fixes ``(s1, s2, s3)``.
    """
    f1, f2, f3 = forced if forced is not None else (None, None, None)
    s1 = couple_and_measure(reg, wire, "A1", MeasBasis.z(), rng, forced=f1)
    s2 = couple_and_measure(reg, wire, "A2", MeasBasis.z(), rng, forced=f2)
    angle = phi_prime(s1, s2) if callable(phi_prime) else phi_prime
    s3 = couple_and_measure(reg, wire, "A3", MeasBasis.m(angle), rng, forced=f3)
    return s1, s2, s3


@dataclass
class PauliFrame:
    """Pending byproduct ``X^x Z^z`` per wire; the physical state is
    ``(prod_j X_j^{x_j} Z_j^{z_j}) |ideal>`` up to a global phase."""

    x: np.ndarray
    z: np.ndarray

    @classmethod
    def zeros(cls, n_wires: int, batch: int = 1) -> PauliFrame:
        return cls(np.zeros((batch, n_wires), dtype=np.uint8), np.zeros((batch, n_wires), dtype=np.uint8))

    def copy(self) -> PauliFrame:
        return PauliFrame(self.x.copy(), self.z.copy())


def adaptive_angle(frame: PauliFrame, wire: int, target_phi):
    """``(-1)^{x_wire} * phi``: an X byproduct flips the sign of a Z rotation."""
    return (1 - 2 * frame.x[:, wire].astype(float)) * np.asarray(target_phi, dtype=float)


def frame_after_j(frame: PauliFrame, wire: int, new_x) -> PauliFrame:
    """``(x, z) -> (z xor new_x, x)``: H swaps X and Z, then the fresh X byproduct."""
    out = frame.copy()
    out.x[:, wire] = frame.z[:, wire] ^ np.asarray(new_x, dtype=np.uint8)
    out.z[:, wire] = frame.x[:, wire]
    return out


def frame_after_cz(frame: PauliFrame, wire_a: int, wire_b: int) -> PauliFrame:
    """``CZ (X ⊗ I) = (X ⊗ Z) CZ``: X on one side seeds Z on the other."""
    if wire_a == wire_b:
        raise ValueError("CZ needs two distinct wires")
    out = frame.copy()
    out.z[:, wire_b] ^= frame.x[:, wire_a]
    out.z[:, wire_a] ^= frame.x[:, wire_b]
    return out


@dataclass
class LossyChannel:
    """i.i.d. Bernoulli loss on each transmitted Bell half."""

    loss_prob: float
    rng: np.random.Generator
    resend_count: int = 0
    max_attempts: int = MAX_ATTEMPTS
    transmissions: int = field(default=0)

    def __post_init__(self):
        if not 0.0 <= self.loss_prob < 1.0:
            raise ValueError("loss probability must lie in [0, 1)")


def transmit(channel: LossyChannel, batch: int = 1) -> np.ndarray:
    """Resend until delivery; returns the number of attempts per repetition.

    The recv_status stream of a repetition with ``a`` attempts is
    ``a - 1`` ones (lost) followed by a single zero (delivered).
    """
    attempts = np.ones(batch, dtype=np.int64)
    channel.transmissions += batch
    if channel.loss_prob == 0.0:
        return attempts
    pending = np.flatnonzero(channel.rng.random(batch) < channel.loss_prob)
    while pending.size:
        attempts[pending] += 1
        if attempts[pending[0]] > channel.max_attempts:
            raise ChannelFault(f"no delivery after {channel.max_attempts} attempts")
        pending = pending[channel.rng.random(pending.size) < channel.loss_prob]
    channel.resend_count += int(attempts.sum() - batch)
    return attempts


def recv_statuses(attempts: int) -> list[int]:
    return [1] * (int(attempts) - 1) + [0]


def redelegation_probability(loss_prob: float, n_gadgets: int) -> float:
    """Chance that an unprotected delegation loses at least one ancilla."""
    return 1.0 - (1.0 - loss_prob) ** n_gadgets


def expected_resends(loss_prob: float, n_gadgets: int = 1) -> float:
    return n_gadgets * loss_prob / (1.0 - loss_prob)
