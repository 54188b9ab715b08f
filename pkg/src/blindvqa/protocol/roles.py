"""Client and server roles as message-ordered state machines.

Both roles walk the same public schedule of messages derived from the brick
grid.  Calling a role out of order raises :class:`ProtocolError`.

The simulation shares one quantum state between the parties: the server's
Bell pair is handed to the client, who measures its travelling half and
returns the collapsed server half, standing in for the physical channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import adqc, qsim
from ..patterns import SLOTS_PER_WIRE, ClientSecrets, PatternCircuit, PublicPattern
from ..qsim import Register, Statevector

PAULIS = {"I": qsim.I2, "X": qsim.X, "Z": qsim.Z, "XZ": qsim.X @ qsim.Z}


class ProtocolError(RuntimeError):
    """A message arrived out of the agreed order."""


def message_schedule(public: PublicPattern, role: str) -> list[tuple]:
    """Ordered list of steps a role takes for the whole pattern.

    Within a column each pair runs its first two slots per wire (top, then
    bottom), a CZ, the last two slots and another CZ.
    """
    gadget = {"client": ("bell", "phi", "s3"), "server": ("bell", "attach", "s1s2", "s3")}[role]
    steps: list[tuple] = []
    half = SLOTS_PER_WIRE // 2
    for c, col in enumerate(public.columns):
        if c == public.depth:
            steps.append(("body_end",))
        for a, b in col:
            for stage in range(2):
                for q in (a, b):
                    for slot in range(stage * half, (stage + 1) * half):
                        steps += [(tag, c, q, slot) for tag in gadget]
                steps.append(("cz", c, a, b))
    steps.append(("output",))
    return steps


class _Cursor:
    def __init__(self, steps: list[tuple], who: str):
        self.steps, self.who, self.i = steps, who, 0

    def peek(self) -> tuple:
        return self.steps[self.i] if self.i < len(self.steps) else ("finished",)

    def expect(self, tag: str) -> tuple:
        step = self.peek()
        if step[0] != tag:
            raise ProtocolError(f"{self.who}: got '{tag}' while expecting '{step[0]}' (step {self.i})")
        self.i += 1
        return step

    @property
    def finished(self) -> bool:
        return self.i >= len(self.steps)


# ---------------------------------------------------------------- attacks


@dataclass(frozen=True)
class AttackSpec:
    """Pauli applied by the server to each physical output wire."""

    paulis: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "paulis", tuple(p.upper() for p in self.paulis))
        for p in self.paulis:
            if p not in PAULIS:
                raise ValueError(f"unknown Pauli {p!r}")

    @classmethod
    def identity(cls, n_wires: int) -> AttackSpec:
        return cls(("I",) * n_wires)

    @classmethod
    def from_counts(cls, n_wires: int, a: int = 0, b: int = 0, c: int = 0) -> AttackSpec:
        """``a`` X's, ``b`` Z's and ``c`` XZ's on the leading wires."""
        if min(a, b, c) < 0 or a + b + c > n_wires:
            raise ValueError("attack counts must be non-negative and fit the wire count")
        return cls(("X",) * a + ("Z",) * b + ("XZ",) * c + ("I",) * (n_wires - a - b - c))

    @property
    def n_wires(self) -> int:
        return len(self.paulis)

    @property
    def a(self) -> int:
        return self.paulis.count("X")

    @property
    def b(self) -> int:
        return self.paulis.count("Z")

    @property
    def c(self) -> int:
        return self.paulis.count("XZ")

    @property
    def weight(self) -> int:
        return self.a + self.b + self.c

    @property
    def species(self) -> str | None:
        """'X', 'Z' or 'XZ' for single-species attacks, None otherwise."""
        kinds = {p for p in self.paulis if p != "I"}
        return kinds.pop() if len(kinds) == 1 else None

    def gates(self) -> np.ndarray:
        return np.stack([PAULIS[p] for p in self.paulis])


def adversary_apply(state: Statevector, attack: AttackSpec, permutation: np.ndarray | None = None) -> Statevector:
    """Apply the attack to a state whose wires are in logical order.

    ``permutation[b, l]`` is the physical wire of logical wire ``l`` in
    repetition ``b``; logical wire ``l`` therefore receives the Pauli the
    server put on that physical wire.  Without a permutation wire ``l`` is
    physical wire ``l``.
    """
    n = state.n_qubits
    if attack.n_wires != n:
        raise ValueError("attack and state disagree on the wire count")
    gates = attack.gates()
    if permutation is None:
        for q in range(n):
            if attack.paulis[q] != "I":
                state = qsim.apply_1q(state, gates[q], q, check=False)
        return state
    permutation = np.broadcast_to(np.asarray(permutation), (state.batch, n))
    for l in range(n):
        state = qsim.apply_1q(state, gates[permutation[:, l]], l, check=False)
    return state


# ---------------------------------------------------------------- server


class HonestServer:
    """Runs the gadgets and CZs it is told to, measuring outputs in Z."""

    def __init__(self):
        self.reg: Register | None = None
        self.cursor: _Cursor | None = None

    def start(self, public: PublicPattern, batch: int, rng: np.random.Generator) -> None:
        self.public, self.batch, self.rng = public, batch, rng
        self.cursor = _Cursor(message_schedule(public, "server"), "server")
        self.reg = Register(batch)
        for q in range(public.n_wires):
            self.reg.add_qubit(q, qsim.KET0)
        self.losses = np.zeros(batch, dtype=np.int64)

    def _advance_to(self, tag: str) -> tuple:
        if self.cursor is None:
            raise ProtocolError("server: session not started")
        while self.cursor.peek()[0] == "body_end":
            self.cursor.expect("body_end")
            self.on_body_end()
        return self.cursor.expect(tag)

    def send_bell(self) -> Statevector:
        """Prepare a Bell pair; the returned joint state's wire 1 travels."""
        self._step = self._advance_to("bell")
        return adqc.bell_pair(self.batch)

    def receive_status(self, attempts: np.ndarray) -> None:
        """Delivery report; every lost attempt was replaced by a fresh pair."""
        self.losses += np.asarray(attempts) - 1

    def attach(self, server_half: Statevector) -> None:
        self._advance_to("attach")
        adqc.attach_ancillas(self.reg, server_half)

    def measure_s1s2(self) -> tuple[np.ndarray, np.ndarray]:
        _, _, q, _ = self._advance_to("s1s2")
        self._wire = q
        s1 = adqc.couple_and_measure(self.reg, q, "A1", qsim.MeasBasis.z(), self.rng)
        s2 = adqc.couple_and_measure(self.reg, q, "A2", qsim.MeasBasis.z(), self.rng)
        return s1, s2

    def measure_s3(self, phi_prime: np.ndarray) -> np.ndarray:
        self._advance_to("s3")
        return adqc.couple_and_measure(self.reg, self._wire, "A3", qsim.MeasBasis.m(phi_prime), self.rng)

    def apply_cz(self) -> None:
        _, _, a, b = self._advance_to("cz")
        self.reg.apply_2q("CZ", a, b)

    def on_body_end(self) -> None:
        """Hook between the last body column and the readout column."""

    def measure_outputs(self) -> np.ndarray:
        self._advance_to("output")
        bits = [self.reg.measure(q, qsim.MeasBasis.z(), self.rng) for q in range(self.public.n_wires)]
        return np.stack(bits, axis=1)

    def output_expectations(self) -> np.ndarray:
        """Exact ``<Z>`` per physical wire instead of sampling (exact mode)."""
        self._advance_to("output")
        return np.stack([self.reg.expectation(q, "Z") for q in range(self.public.n_wires)], axis=1)


class PauliAttackServer(HonestServer):
    """Honest except for a Pauli attack on the output wires."""

    def __init__(self, attack: AttackSpec):
        super().__init__()
        self.attack = attack

    def on_body_end(self) -> None:
        if self.attack.n_wires != self.public.n_wires:
            raise ValueError("attack does not match the pattern's wire count")
        for q, p in enumerate(self.attack.paulis):
            if p != "I":
                self.reg.apply_1q(q, PAULIS[p], check=False)


# ---------------------------------------------------------------- client


class Client:
    """Holds the secrets, answers with encrypted angles and tracks the frame."""

    def __init__(self, pattern: PatternCircuit, secrets: ClientSecrets, rng: np.random.Generator):
        if secrets.batch != pattern.batch:
            raise ValueError("pattern and secrets come from different compilations")
        self.pattern, self.secrets, self.rng = pattern, secrets, rng
        self.batch = pattern.batch
        self.cursor = _Cursor(message_schedule(pattern.public, "client"), "client")
        self.frame = adqc.PauliFrame.zeros(pattern.n_wires, self.batch)

    def _advance_to(self, tag: str) -> tuple:
        while self.cursor.peek()[0] == "body_end":
            self.cursor.expect("body_end")
        return self.cursor.expect(tag)

    def receive_bell(self, pair: Statevector) -> Statevector:
        """Measure the travelling half in ``M(-k pi/4)``; returns the server half."""
        _, c, q, slot = self._advance_to("bell")
        gs = adqc.GadgetSecrets.draw(self.rng, self.batch)
        s0, remote = adqc.client_bell_measure(pair, gs.k, self.rng)
        gs.s0 = s0
        gs.k = gs.k.astype(np.uint8)
        self._current = gs
        self.secrets.gadgets.append(gs)
        return remote

    def encrypted_angle(self, s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
        _, c, q, slot = self._advance_to("phi")
        gs = self._current
        target = self.pattern.angles[:, c, q, slot]
        phi = adqc.adaptive_angle(self.frame, q, target)
        self._wire = q
        return np.atleast_1d(adqc.encrypted_angle(phi, s1, gs.k, gs.s0, gs.r))

    def receive_s3(self, s3: np.ndarray) -> None:
        self._advance_to("s3")
        self.frame = adqc.frame_after_j(self.frame, self._wire, s3 ^ self._current.r)

    def note_cz(self) -> None:
        _, _, a, b = self._advance_to("cz")
        self.frame = adqc.frame_after_cz(self.frame, a, b)

    def finish(self) -> adqc.PauliFrame:
        self._advance_to("output")
        return self.frame
