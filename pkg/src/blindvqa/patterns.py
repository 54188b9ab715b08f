"""Compilation of gate circuits into universal gate patterns with trap wires.

A *brick* acts on two wires.  Each wire carries four J slots; the server
applies a CZ after the second and after the fourth slot::

    top:    J(a0) J(a1) ─●─ J(a2) J(a3) ─●─
    bottom: J(a4) J(a5) ─●─ J(a6) J(a7) ─●─

(angles listed in time order).  With ``a3 = a7 = 0`` the middle layer is
diagonal, the two CZs cancel and the brick is ``U1 ⊗ U2`` with
``U1 = RZ(a2) RX(a1) RZ(a0)``.  With ``a2 = a5 = pi/2``, ``a7 = -pi/2`` and
the rest zero it is ``CX`` with the top wire as control.  Because the brick
is symmetric under swapping its wires, the angles of each wire depend only on
that wire's role (control, target, or single-qubit factor), never on whether it
sits on top.

Pairing layouts
---------------
``paired``
    Every column pairs wires ``(2i, 2i+1)``.  The secret permutation always
    puts the two compute wires of a two-qubit circuit into the same pair;
    every other wire is placed uniformly at random.
``round_robin``
    Column ``c`` uses round ``c mod (N-1)`` of the circle-method tournament,
    so any two wires meet once in every ``N-1`` consecutive columns.  Each
    entangling gate is given a full block of ``N-1`` columns, which keeps the
    depth independent of the permutation.  The permutation is uniform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import adqc, qsim
from .qsim import Register, Statevector

COMPUTE, Z_TRAP, X_TRAP = 0, 1, 2
KIND_NAMES = {COMPUTE: "compute", Z_TRAP: "z_trap", X_TRAP: "x_trap"}
CZ_SLOTS = (2, 4)
SLOTS_PER_WIRE = 4

HALF_PI = np.pi / 2
# per-wire halves of the CX brick, indexed by role
CONTROL_HALF = np.array([0.0, 0.0, HALF_PI, 0.0])
TARGET_HALF = np.array([0.0, HALF_PI, 0.0, -HALF_PI])
IDENTITY_HALF = np.zeros(4)


class CompileError(ValueError):
    pass


def _wrap(angle: float) -> float:
    """Map to ``(-pi, pi]``."""
    a = float(np.mod(angle + np.pi, 2 * np.pi) - np.pi)
    return np.pi if np.isclose(a, -np.pi, atol=1e-15) else a


def zxz_angles(u: np.ndarray, tol: float = 1e-12) -> tuple[float, float, float, float]:
    """``(a, b, c, phase)`` with ``u = e^{i phase} RZ(a) RX(b) RZ(c)``.

    ``b`` lies in ``[0, pi]``.  At ``b = 0`` or ``b = pi`` only ``a ± c`` is
    determined; ``c`` is then set to 0.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2) or not qsim.is_unitary(u, 1e-9):
        raise ValueError("expected a 2x2 unitary")
    w = u / np.sqrt(np.linalg.det(u))
    alpha, beta = w[0, 0], w[0, 1]
    b = 2.0 * np.arctan2(abs(beta), abs(alpha))
    if abs(beta) < tol:
        a, c = -2.0 * np.angle(alpha), 0.0
    elif abs(alpha) < tol:
        a, c = -2.0 * np.angle(beta) - np.pi, 0.0
    else:
        s = -2.0 * np.angle(alpha)  # a + c
        d = -2.0 * np.angle(beta) - np.pi  # a - c
        a, c = (s + d) / 2.0, (s - d) / 2.0
    a, c = _wrap(a), _wrap(c)
    rebuilt = qsim.rz(a) @ qsim.rx(b) @ qsim.rz(c)
    idx = np.unravel_index(np.argmax(np.abs(rebuilt)), (2, 2))
    phase = float(np.angle(u[idx] / rebuilt[idx]))
    return a, float(b), c, phase


def euler_zxz(u: np.ndarray) -> tuple[float, float, float, float]:
    """Angles of three J gadgets realising ``u``.

    Returns ``(phi1, phi2, phi3, phase)`` with
    ``e^{i phase} RZ(phi1) RX(phi2) RZ(phi3) = H u``, equivalently
    ``u = e^{i phase} J(phi1) J(phi2) J(phi3)`` (so ``J(phi3)`` acts first).
    """
    return zxz_angles(qsim.H @ np.asarray(u, dtype=complex))


def j_matrix(phi: float) -> np.ndarray:
    return qsim.H @ qsim.rz(phi)


def half_angles(u: np.ndarray) -> np.ndarray:
    """Four slot angles (time order) of a brick half realising ``u``."""
    a, b, c, _ = zxz_angles(u)
    return np.array([c, b, a, 0.0])


def is_identity(u: np.ndarray, tol: float = 1e-12) -> bool:
    return abs(abs(np.trace(u)) / 2.0 - 1.0) < tol


@dataclass(frozen=True)
class Brick:
    """Eight J angles (top slots 0-3, bottom slots 0-3, time order)."""

    angles: tuple[float, ...]
    cz_slots: tuple[int, int] = CZ_SLOTS

    def __post_init__(self):
        if len(self.angles) != 8:
            raise ValueError("a brick has exactly 8 J angles")
        if self.cz_slots != CZ_SLOTS:
            raise ValueError(f"CZ gates sit after slots {CZ_SLOTS}")

    @property
    def top(self) -> np.ndarray:
        return np.array(self.angles[:4])

    @property
    def bottom(self) -> np.ndarray:
        return np.array(self.angles[4:])

    def unitary(self) -> np.ndarray:
        """Ideal 4x4 action (top wire is the more significant qubit)."""

        def stage(half, lo, hi):
            m = np.eye(2, dtype=complex)
            for phi in half[lo:hi]:
                m = j_matrix(phi) @ m
            return m

        top, bot = self.top, self.bottom
        first = np.kron(stage(top, 0, 2), stage(bot, 0, 2))
        second = np.kron(stage(top, 2, 4), stage(bot, 2, 4))
        return qsim.CZ @ second @ qsim.CZ @ first


def identity_brick() -> Brick:
    return Brick((0.0,) * 8)


def brick_single_pair(u1: np.ndarray, u2: np.ndarray) -> Brick:
    """Brick realising ``u1 ⊗ u2`` (``u1`` on the top wire)."""
    brick = Brick(tuple(np.concatenate([half_angles(u1), half_angles(u2)])))
    check = validate_brick(brick, np.kron(u1, u2), gadgets=False)
    if not check.passed:
        raise AssertionError(f"product brick failed validation (deviation {check.deviation:.2e})")
    return brick


def brick_cx() -> Brick:
    """Brick realising CX with the top wire as control."""
    return Brick(tuple(np.concatenate([CONTROL_HALF, TARGET_HALF])))


@dataclass(frozen=True)
class BrickCheck:
    passed: bool
    deviation: float


def _phase_aligned_deviation(actual: np.ndarray, expected: np.ndarray) -> float:
    overlap = np.trace(np.conj(expected).T @ actual)
    phase = overlap / abs(overlap) if abs(overlap) > 1e-12 else 1.0
    return float(np.max(np.abs(actual - phase * expected)))


def simulate_brick(brick: Brick) -> np.ndarray:
    """4x4 matrix obtained by running the brick's 16 gadgets (0-branch, k = r = 0).

    All outcomes are post-selected on 0, so no byproducts arise and the
    matrix is directly comparable with the intended gate.
    """
    reg = Register(batch=4)
    basis = np.eye(4, dtype=complex)
    reg.add_block(["top", "bot"], Statevector(basis))
    zero = np.zeros(4, dtype=np.int64)
    for lo, hi in ((0, 2), (2, 4)):
        for wire, half in (("top", brick.top), ("bot", brick.bottom)):
            for phi in half[lo:hi]:
                _, a1 = adqc.client_bell_measure(adqc.bell_pair(4), zero, None, forced=0)
                adqc.attach_ancillas(reg, a1)
                phi_prime = adqc.encrypted_angle(phi, 0, 0, 0, 0)
                adqc.run_j_gadget(reg, wire, phi_prime, None, forced=(0, 0, 0))
        reg.apply_2q("CZ", "top", "bot")
    return reg.state(["top", "bot"]).amps.T


def validate_brick(brick: Brick, expected: np.ndarray, tol: float = 1e-9, *, gadgets: bool = True) -> BrickCheck:
    """Compare a brick with ``expected`` up to global phase.

    With ``gadgets=True`` the brick is executed gadget by gadget; otherwise
    its ideal matrix is used.
    """
    actual = simulate_brick(brick) if gadgets else brick.unitary()
    dev = _phase_aligned_deviation(actual, np.asarray(expected, dtype=complex))
    return BrickCheck(dev < tol, dev)


# ---------------------------------------------------------------- source circuits

_FIXED = {
    "i": qsim.I2,
    "h": qsim.H,
    "x": qsim.X,
    "y": qsim.Y,
    "z": qsim.Z,
    "s": qsim.S,
    "sdg": np.conj(qsim.S).T,
    "t": qsim.T,
    "tdg": np.conj(qsim.T).T,
}
_ROTATIONS = {"rx": qsim.rx, "ry": qsim.ry, "rz": qsim.rz}
TWO_QUBIT = ("cx", "cz")


@dataclass(frozen=True)
class Gate:
    """One source-circuit operation.

    Rotations take either a fixed ``angle`` or a variational ``param`` index
    (the bound angle is then ``theta[param]``).  ``u`` gates carry an explicit
    matrix as nested tuples.
    """

    name: str
    wires: tuple[int, ...]
    angle: float | None = None
    param: int | None = None
    matrix: tuple | None = None

    def __post_init__(self):
        name = self.name.lower()
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "wires", tuple(int(w) for w in self.wires))
        arity = 2 if name in TWO_QUBIT else 1
        if name not in _FIXED and name not in _ROTATIONS and name not in TWO_QUBIT and name != "u":
            raise CompileError(f"unsupported gate kind {self.name!r}")
        if len(self.wires) != arity:
            raise CompileError(f"{name} acts on {arity} wire(s), got {self.wires}")
        if arity == 2 and self.wires[0] == self.wires[1]:
            raise CompileError(f"{name} needs two distinct wires")
        if name in _ROTATIONS and (self.angle is None) == (self.param is None):
            raise CompileError(f"{name} needs exactly one of angle/param")
        if name == "u" and self.matrix is None:
            raise CompileError("u gate needs a matrix")

    @property
    def is_parameterized(self) -> bool:
        return self.param is not None

    def unitary(self) -> np.ndarray:
        if self.name in _FIXED:
            return _FIXED[self.name]
        if self.name in _ROTATIONS:
            if self.param is not None:
                raise CompileError("unbound variational parameter")
            return _ROTATIONS[self.name](self.angle)
        if self.name == "u":
            return np.array(self.matrix, dtype=complex)
        raise CompileError(f"{self.name} is not a single-qubit gate")

    @classmethod
    def u(cls, wire: int, matrix: np.ndarray) -> Gate:
        m = np.asarray(matrix, dtype=complex)
        return cls("u", (wire,), matrix=tuple(tuple(complex(v) for v in row) for row in m))


@dataclass(frozen=True)
class SourceCircuit:
    w: int
    ops: tuple[Gate, ...] = ()
    encoder: tuple[Gate, ...] = ()

    def __post_init__(self):
        if self.w < 1:
            raise CompileError("a circuit needs at least one qubit")
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "encoder", tuple(self.encoder))
        seen: set[int] = set()
        for g in self.encoder + self.ops:
            if any(not 0 <= q < self.w for q in g.wires):
                raise CompileError(f"gate {g.name} on {g.wires} is outside 0..{self.w - 1}")
            if g.param is not None:
                if g.param < 0:
                    raise CompileError("parameter indices must be non-negative")
                if g.param in seen:
                    # the +-pi/2 shift rule is exact only for single occurrences
                    raise CompileError(f"parameter {g.param} used by more than one gate")
                seen.add(g.param)

    @property
    def all_ops(self) -> tuple[Gate, ...]:
        return self.encoder + self.ops

    @property
    def parameter_indices(self) -> list[int]:
        return sorted(g.param for g in self.all_ops if g.param is not None)

    @property
    def is_concrete(self) -> bool:
        return not self.parameter_indices

    def bind(self, theta: Sequence[float]) -> SourceCircuit:
        theta = [float(t) for t in theta]

        def bind_gate(g: Gate) -> Gate:
            if g.param is None:
                return g
            if g.param >= len(theta):
                raise CompileError(f"dangling parameter index {g.param} (L = {len(theta)})")
            return Gate(g.name, g.wires, angle=theta[g.param])

        return SourceCircuit(self.w, tuple(map(bind_gate, self.ops)), tuple(map(bind_gate, self.encoder)))

    def to_dict(self) -> dict:
        def enc(g: Gate) -> dict:
            d: dict = {"gate": g.name, "wires": list(g.wires)}
            if g.angle is not None:
                d["angle"] = g.angle
            if g.param is not None:
                d["param"] = g.param
            if g.matrix is not None:
                d["matrix"] = [[[v.real, v.imag] for v in row] for row in g.matrix]
            return d

        return {"w": self.w, "encoder": [enc(g) for g in self.encoder], "ops": [enc(g) for g in self.ops]}

    @classmethod
    def from_dict(cls, data: dict) -> SourceCircuit:
        def dec(d: dict) -> Gate:
            if not isinstance(d, dict) or "gate" not in d or "wires" not in d:
                raise CompileError(f"malformed gate entry {d!r}")
            matrix = d.get("matrix")
            if matrix is not None:
                matrix = tuple(tuple(complex(re, im) for re, im in row) for row in matrix)
            return Gate(d["gate"], tuple(d["wires"]), angle=d.get("angle"), param=d.get("param"), matrix=matrix)

        if "w" not in data:
            raise CompileError("circuit needs a qubit count 'w'")
        return cls(int(data["w"]), tuple(map(dec, data.get("ops", []))), tuple(map(dec, data.get("encoder", []))))


def simulate_source(circuit: SourceCircuit) -> Statevector:
    """Direct statevector simulation of a concrete circuit from ``|0...0>``."""
    state = Statevector.zero(circuit.w)
    for g in circuit.all_ops:
        if g.name in TWO_QUBIT:
            state = qsim.apply_2q(state, g.name.upper(), *g.wires)
        else:
            state = qsim.apply_1q(state, g.unitary(), g.wires[0], check=False)
    return state


def source_expectations(circuit: SourceCircuit, observables: Sequence[str] | None = None) -> np.ndarray:
    """Exact per-wire expectation values of a concrete circuit, shape ``(w,)``."""
    obs = list(observables) if observables is not None else ["Z"] * circuit.w
    state = simulate_source(circuit)
    return np.array([qsim.expectation(state, q, obs[q])[0] for q in range(circuit.w)])


# ---------------------------------------------------------------- patterns


def wire_count(w: int) -> int:
    """``3w`` rounded up to an even number (odd counts get one extra Z-trap)."""
    n = 3 * w
    return n + (n % 2)


def round_robin_pairs(n_wires: int, round_index: int) -> tuple[tuple[int, int], ...]:
    """Circle-method round ``round_index`` over an even number of wires."""
    m = n_wires - 1
    r = round_index % m
    lineup = [0] + [(i + r) % m + 1 for i in range(m)]
    pairs = [tuple(sorted((lineup[i], lineup[n_wires - 1 - i]))) for i in range(n_wires // 2)]
    return tuple(sorted(pairs))


@dataclass(frozen=True)
class PublicPattern:
    """Everything the server learns: wire count, depth and the brick grid."""

    n_wires: int
    depth: int
    columns: tuple[tuple[tuple[int, int], ...], ...]
    cz_slots: tuple[int, int] = CZ_SLOTS

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def readout_column(self) -> int:
        return self.depth

    @property
    def n_gadgets(self) -> int:
        return self.n_columns * self.n_wires * SLOTS_PER_WIRE

    def to_json(self) -> str:
        doc = {
            "n_wires": self.n_wires,
            "depth": self.depth,
            "readout_column": self.readout_column,
            "j_per_wire_per_brick": SLOTS_PER_WIRE,
            "cz_slots": list(self.cz_slots),
            "columns": [[list(p) for p in col] for col in self.columns],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> PublicPattern:
        doc = json.loads(text)
        cols = tuple(tuple(tuple(p) for p in col) for col in doc["columns"])
        return cls(doc["n_wires"], doc["depth"], cols, tuple(doc["cz_slots"]))


@dataclass
class ClientSecrets:
    """Client-only data; never part of any server-bound message.

    Arrays have a leading repetition axis.  ``permutation[b, l]`` is the
    physical wire of logical wire ``l`` (compute wires first, then Z-traps,
    then X-traps).  ``gadgets`` is filled during execution.
    """

    permutation: np.ndarray
    trap_map: np.ndarray
    h_positions: np.ndarray
    readout: np.ndarray
    expected: np.ndarray
    gadgets: list = field(default_factory=list)

    @property
    def batch(self) -> int:
        return self.permutation.shape[0]


@dataclass
class PatternCircuit:
    """Compiled pattern: public grid plus the client's angle tables.

    ``angles[b, c, q]`` holds the four time-ordered J angles of physical wire
    ``q`` in column ``c`` for repetition ``b``.
    """

    public: PublicPattern
    w: int
    layout: str
    permutation: np.ndarray
    trap_map: np.ndarray
    h_positions: np.ndarray
    readout: np.ndarray
    angles: np.ndarray
    observables: tuple[str, ...]

    @property
    def n_wires(self) -> int:
        return self.public.n_wires

    @property
    def depth(self) -> int:
        return self.public.depth

    @property
    def batch(self) -> int:
        return self.permutation.shape[0]

    def compute_wires(self) -> np.ndarray:
        """Physical wires of the compute qubits, shape ``(B, w)``."""
        return self.permutation[:, : self.w]

    def brick(self, column: int, pair: tuple[int, int], run: int = 0) -> Brick:
        a, b = pair
        return Brick(tuple(np.concatenate([self.angles[run, column, a], self.angles[run, column, b]])))


def _lower(circuit: SourceCircuit) -> list[tuple]:
    """Gate list as ('u', q, matrix) and ('cx', control, target) items."""
    items: list[tuple] = []
    for g in circuit.all_ops:
        if g.name == "cx":
            items.append(("cx", *g.wires))
        elif g.name == "cz":
            a, b = g.wires
            items += [("u", b, qsim.H), ("cx", a, b), ("u", b, qsim.H)]
        else:
            items.append(("u", g.wires[0], g.unitary()))
    return items


def _schedule(circuit: SourceCircuit) -> list[tuple]:
    """Body as a list of ('product', [U_q]) and ('cx', a, b) entries.

    Pending single-qubit gates are flushed into a product column only when an
    entangling gate needs them, so the schedule depends on the source alone.
    """
    w = circuit.w
    pending = [np.eye(2, dtype=complex) for _ in range(w)]
    cols: list[tuple] = []
    for item in _lower(circuit):
        if item[0] == "u":
            _, q, u = item
            pending[q] = u @ pending[q]
            continue
        _, a, b = item
        if not (is_identity(pending[a]) and is_identity(pending[b])):
            cols.append(("product", pending))
            pending = [np.eye(2, dtype=complex) for _ in range(w)]
        cols.append(("cx", a, b))
    if not cols or not all(is_identity(u) for u in pending):
        cols.append(("product", pending))
    return cols


def _draw_permutation(rng, batch: int, n_wires: int, w: int, layout: str) -> np.ndarray:
    keys = rng.random((batch, n_wires))
    if layout == "paired" and w == 2:
        slot = rng.integers(0, n_wires // 2, size=batch)
        flip = rng.integers(0, 2, size=batch)
        rows = np.arange(batch)
        keys[rows, 2 * slot + flip] = -2.0
        keys[rows, 2 * slot + 1 - flip] = -1.0
    return np.argsort(keys, axis=1, kind="stable")


def compile(
    source: SourceCircuit,
    rng: np.random.Generator,
    *,
    batch: int = 1,
    observables: Sequence[str] | None = None,
    layout: str | None = None,
) -> tuple[PatternCircuit, ClientSecrets]:
    """Compile ``source`` into a trap-protected brick pattern.

    Each of the ``batch`` repetitions receives its own permutation and X-trap
    Hadamard positions; the public grid is shared.

    Parameters
    ----------
    observables
        Measurement basis per compute wire ('Z' or 'X'); X is realised by a
        Hadamard in the final (readout) column.
    layout
        'paired' (default for w <= 2) or 'round_robin' (default otherwise).
    """
    if not source.is_concrete:
        raise CompileError("bind variational parameters before compiling")
    w = source.w
    obs = tuple(o.upper() for o in (observables if observables is not None else ["Z"] * w))
    if len(obs) != w or any(o not in ("Z", "X") for o in obs):
        raise CompileError("need one observable in {Z, X} per compute wire")
    layout = layout or ("paired" if w <= 2 else "round_robin")
    if layout not in ("paired", "round_robin"):
        raise CompileError(f"unknown layout {layout!r}")
    if layout == "paired" and w > 2:
        raise CompileError("the paired layout cannot entangle more than two compute wires")

    n = wire_count(w)
    n_x = w
    n_z = n - w - n_x
    kinds = np.array([COMPUTE] * w + [Z_TRAP] * n_z + [X_TRAP] * n_x)

    schedule = _schedule(source)
    block = 1 if layout == "paired" else n - 1
    spans = [block if entry[0] == "cx" else 1 for entry in schedule]
    depth = int(sum(spans))
    n_cols = depth + 1
    if layout == "paired":
        columns = tuple(tuple((2 * i, 2 * i + 1) for i in range(n // 2)) for _ in range(n_cols))
    else:
        columns = tuple(round_robin_pairs(n, c) for c in range(n_cols))
    public = PublicPattern(n, depth, columns)

    perm = _draw_permutation(rng, batch, n, w, layout)
    rows = np.arange(batch)

    logical = np.zeros((batch, n_cols, n, SLOTS_PER_WIRE))
    partner = np.zeros((n_cols, n), dtype=np.int64)
    for c, col in enumerate(columns):
        for a, b in col:
            partner[c, a], partner[c, b] = b, a

    col0 = 0
    for entry, span in zip(schedule, spans):
        if entry[0] == "product":
            for q, u in enumerate(entry[1]):
                logical[:, col0, q] = half_angles(u)
        else:
            _, a, b = entry
            cols = np.arange(col0, col0 + span)
            met = partner[cols][:, perm[:, a]].T == perm[:, b][:, None]
            if not np.all(met.sum(axis=1) == 1):
                raise CompileError("entangling gate between compute wires that never meet")
            where = cols[np.argmax(met, axis=1)]
            logical[rows, where, a] = CONTROL_HALF
            logical[rows, where, b] = TARGET_HALF
        col0 += span

    h_half = half_angles(qsim.H)
    h_positions = np.full((batch, n), -1, dtype=np.int64)
    x_logical = np.flatnonzero(kinds == X_TRAP)
    for l in x_logical:
        pos = rng.integers(0, depth, size=batch)
        logical[rows, pos, l] = h_half
        h_positions[rows, perm[:, l]] = pos

    readout_logical = np.array([o == "X" for o in obs] + [False] * n_z + [True] * n_x)
    logical[:, depth, readout_logical] = h_half

    angles = np.empty_like(logical)
    angles[rows[:, None], :, perm] = logical.transpose(0, 2, 1, 3)
    trap_map = np.empty((batch, n), dtype=np.int8)
    trap_map[rows[:, None], perm] = kinds
    readout = np.empty((batch, n), dtype=np.int8)
    readout[rows[:, None], perm] = readout_logical.astype(np.int8)

    pattern = PatternCircuit(public, w, layout, perm, trap_map, h_positions, readout, angles, obs)
    secrets = ClientSecrets(
        permutation=perm,
        trap_map=trap_map,
        h_positions=h_positions,
        readout=readout,
        expected=np.zeros((batch, n), dtype=np.uint8),
    )
    return pattern, secrets
