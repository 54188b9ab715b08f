"""Dense statevector engine.

Every state carries a leading *batch* axis of independent repetitions, so a
single state is simply a batch of one.  Gates may be shared by the whole batch
(shape ``(2, 2)``) or given per repetition (shape ``(B, 2, 2)``); measurement
outcomes are always returned as arrays of shape ``(B,)``.

Qubit ordering: wire 0 is the most significant bit of the amplitude index,
i.e. ``|q0 q1 ... q_{n-1}>`` lives at index ``q0 * 2**(n-1) + ... + q_{n-1}``.

Measurement basis convention: ``M(theta)`` has outcome 0 on
``(|0> + e^{i theta}|1>)/sqrt(2)`` and outcome 1 on
``(|0> - e^{i theta}|1>)/sqrt(2)``.  ``M(0)`` is therefore the X basis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

SQRT1_2 = 1.0 / np.sqrt(2.0)

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) * SQRT1_2
S = np.array([[1, 0], [0, 1j]], dtype=complex)
T = np.array([[1, 0], [0, np.exp(1j * np.pi / 4)]], dtype=complex)

KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)
KET_PLUS = np.array([1, 1], dtype=complex) * SQRT1_2
KET_MINUS = np.array([1, -1], dtype=complex) * SQRT1_2

CX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
CZ = np.diag([1, 1, 1, -1]).astype(complex)

UNITARY_TOL = 1e-12
NORM_TOL = 1e-10
MIN_BRANCH_PROB = 1e-14


def rz(theta):
    """``exp(-i theta Z / 2)``; an array of angles yields a stack of gates."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-0.5j * theta)
    out[..., 1, 1] = np.exp(0.5j * theta)
    return out


def rx(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = -1j * s
    out[..., 1, 0] = -1j * s
    return out


def ry(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    return out


def is_unitary(gate: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    gate = np.asarray(gate)
    ident = np.eye(gate.shape[-1])
    prod = np.conj(np.swapaxes(gate, -1, -2)) @ gate
    return bool(np.all(np.abs(prod - ident) <= tol))


class Statevector:
    """Batch of pure states over ``n_qubits`` qubits.

    ``amps`` has shape ``(batch, 2**n_qubits)``.  A 1-D amplitude vector is
    promoted to a batch of one.
    """

    __slots__ = ("n_qubits", "amps")

    def __init__(self, amps, n_qubits: int | None = None):
        amps = np.asarray(amps, dtype=complex)
        if amps.ndim == 1:
            amps = amps[None, :]
        if amps.ndim != 2:
            raise ValueError(f"amplitudes must be 1-D or 2-D, got shape {amps.shape}")
        dim = amps.shape[1]
        n = int(dim).bit_length() - 1
        if dim < 1 or (1 << n) != dim:
            raise ValueError(f"amplitude length {dim} is not a power of two")
        if n_qubits is not None and n_qubits != n:
            raise ValueError(f"expected {n_qubits} qubits, amplitudes describe {n}")
        self.n_qubits = n
        self.amps = amps

    @classmethod
    def zero(cls, n_qubits: int, batch: int = 1) -> Statevector:
        amps = np.zeros((batch, 1 << n_qubits), dtype=complex)
        amps[:, 0] = 1.0
        return cls(amps)

    @classmethod
    def from_bits(cls, bits: Sequence[int], batch: int = 1) -> Statevector:
        index = 0
        for b in bits:
            index = (index << 1) | int(b)
        amps = np.zeros((batch, 1 << len(bits)), dtype=complex)
        amps[:, index] = 1.0
        return cls(amps)

    @classmethod
    def product(cls, qubits: Sequence[np.ndarray]) -> Statevector:
        """Tensor product of single-qubit vectors (each ``(2,)`` or ``(B, 2)``)."""
        state = cls(np.ones((1, 1), dtype=complex))
        for q in qubits:
            state = kron(state, cls(q))
        return state

    @property
    def batch(self) -> int:
        return self.amps.shape[0]

    def vector(self, index: int = 0) -> np.ndarray:
        return self.amps[index]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.amps, axis=1)

    def copy(self) -> Statevector:
        return Statevector(self.amps.copy())

    def broadcast(self, batch: int) -> Statevector:
        if self.batch == batch:
            return self
        if self.batch != 1:
            raise ValueError(f"cannot broadcast batch {self.batch} to {batch}")
        return Statevector(np.repeat(self.amps, batch, axis=0))

    def __repr__(self) -> str:
        return f"Statevector(n_qubits={self.n_qubits}, batch={self.batch})"


def _batched(a: Statevector, b: Statevector) -> tuple[np.ndarray, np.ndarray]:
    if a.batch == b.batch or a.batch == 1 or b.batch == 1:
        return a.amps, b.amps
    raise ValueError(f"batch mismatch: {a.batch} vs {b.batch}")


def kron(a: Statevector, b: Statevector) -> Statevector:
    """Tensor product ``a ⊗ b``; the wires of ``b`` follow those of ``a``."""
    x, y = _batched(a, b)
    out = x[:, :, None] * y[:, None, :]
    return Statevector(out.reshape(out.shape[0], -1))


def _check_wire(state: Statevector, wire: int) -> None:
    if not 0 <= wire < state.n_qubits:
        raise IndexError(f"wire {wire} out of range for {state.n_qubits} qubits")


def _split(state: Statevector, wire: int) -> np.ndarray:
    n = state.n_qubits
    return state.amps.reshape(state.batch, 1 << wire, 2, 1 << (n - wire - 1))


def apply_1q(state: Statevector, gate, wire: int, *, check: bool = True) -> Statevector:
    """Apply a single-qubit gate (shared or per-repetition) to ``wire``."""
    _check_wire(state, wire)
    gate = np.asarray(gate, dtype=complex)
    if gate.shape[-2:] != (2, 2) or gate.ndim not in (2, 3):
        raise ValueError(f"expected a 2x2 gate or a stack of them, got {gate.shape}")
    if check and not is_unitary(gate):
        raise ValueError("gate is not unitary")
    t = _split(state, wire)
    if gate.ndim == 3:
        gate = gate[:, None]
    out = gate @ t
    return Statevector(out.reshape(out.shape[0], -1))


def apply_2q(state: Statevector, kind: str, control: int, target: int) -> Statevector:
    """Apply ``CZ`` or ``CX`` between two distinct wires."""
    _check_wire(state, control)
    _check_wire(state, target)
    if control == target:
        raise ValueError("control and target must differ")
    kind = kind.upper()
    if kind not in ("CZ", "CX"):
        raise ValueError(f"unsupported two-qubit gate {kind!r}")
    n = state.n_qubits
    t = state.amps.reshape((state.batch,) + (2,) * n)
    t = np.moveaxis(t, (1 + control, 1 + target), (1, 2)).copy()
    if kind == "CZ":
        t[:, 1, 1] *= -1
    else:
        t[:, 1] = t[:, 1, ::-1]
    t = np.moveaxis(t, (1, 2), (1 + control, 1 + target))
    return Statevector(t.reshape(state.batch, -1))


@dataclass(frozen=True)
class MeasBasis:
    """Single-qubit measurement basis: ``Z``, ``X`` or ``M(angle)``.

    ``angle`` may be a scalar or an array with one entry per repetition.
    """

    kind: str
    angle: object = 0.0

    def __post_init__(self):
        if self.kind not in ("Z", "X", "M"):
            raise ValueError(f"unknown basis kind {self.kind!r}")

    @classmethod
    def z(cls) -> MeasBasis:
        return cls("Z")

    @classmethod
    def x(cls) -> MeasBasis:
        return cls("X")

    @classmethod
    def m(cls, angle) -> MeasBasis:
        return cls("M", angle)

    def vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Basis kets for outcomes 0 and 1, each shaped ``(B or 1, 2)``."""
        if self.kind == "Z":
            return KET0[None], KET1[None]
        if self.kind == "X":
            return KET_PLUS[None], KET_MINUS[None]
        phase = np.exp(1j * np.atleast_1d(np.asarray(self.angle, dtype=float)))
        plus = np.empty(phase.shape + (2,), dtype=complex)
        minus = np.empty_like(plus)
        plus[:, 0] = minus[:, 0] = SQRT1_2
        plus[:, 1] = SQRT1_2 * phase
        minus[:, 1] = -SQRT1_2 * phase
        return plus, minus

    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        v0, v1 = self.vectors()
        return (
            v0[:, :, None] * np.conj(v0[:, None, :]),
            v1[:, :, None] * np.conj(v1[:, None, :]),
        )


def _components(state: Statevector, wire: int, basis: MeasBasis):
    t = _split(state, wire)
    v0, v1 = basis.vectors()
    c0 = np.einsum("bi,blir->blr", np.conj(v0), t) if v0.shape[0] > 1 else np.einsum(
        "i,blir->blr", np.conj(v0[0]), t
    )
    c1 = np.einsum("bi,blir->blr", np.conj(v1), t) if v1.shape[0] > 1 else np.einsum(
        "i,blir->blr", np.conj(v1[0]), t
    )
    return (v0, v1), (c0, c1)


def outcome_probabilities(state: Statevector, wire: int, basis: MeasBasis) -> np.ndarray:
    """Born probabilities, shape ``(B, 2)``."""
    _check_wire(state, wire)
    _, (c0, c1) = _components(state, wire, basis)
    p0 = np.sum(np.abs(c0) ** 2, axis=(1, 2))
    p1 = np.sum(np.abs(c1) ** 2, axis=(1, 2))
    return np.stack([p0, p1], axis=1)


def measure(
    state: Statevector,
    wire: int,
    basis: MeasBasis,
    rng: np.random.Generator | None,
    *,
    forced=None,
    discard: bool = False,
) -> tuple[np.ndarray, Statevector]:
    """Projective measurement of ``wire``.

    Parameters
    ----------
    rng
        Source of the Born-rule draw.  May be ``None`` when ``forced`` is set.
    forced
        Post-select on the given outcome(s) instead of sampling.
    discard
        Drop the measured wire from the returned state.

    Returns
    -------
    outcomes : ndarray of uint8, shape ``(B,)``
    post_state : Statevector, renormalised onto the observed branch.
    """
    _check_wire(state, wire)
    (v0, v1), (c0, c1) = _components(state, wire, basis)
    p0 = np.sum(np.abs(c0) ** 2, axis=(1, 2))
    p1 = np.sum(np.abs(c1) ** 2, axis=(1, 2))
    if np.any(p0 + p1 < MIN_BRANCH_PROB):
        raise ValueError("both measurement branches have vanishing probability")
    batch = state.batch
    if forced is None:
        if rng is None:
            raise ValueError("an rng is required unless the outcome is forced")
        u = rng.random(batch)
        outcomes = (u * (p0 + p1) >= p0).astype(np.uint8)
    else:
        outcomes = np.broadcast_to(np.asarray(forced, dtype=np.uint8), (batch,)).copy()
    p_out = np.where(outcomes == 1, p1, p0)
    if np.any(p_out < MIN_BRANCH_PROB):
        raise ValueError("requested measurement branch has vanishing probability")
    sel = (outcomes == 1)[:, None, None]
    c = np.where(sel, c1, c0) / np.sqrt(p_out)[:, None, None]
    if discard:
        return outcomes, Statevector(c.reshape(batch, -1))
    v = np.where((outcomes == 1)[:, None], np.broadcast_to(v1, (batch, 2)), np.broadcast_to(v0, (batch, 2)))
    post = c[:, :, None, :] * v[:, None, :, None]
    return outcomes, Statevector(post.reshape(batch, -1))


def expectation(state: Statevector, wire: int, observable: str = "Z") -> np.ndarray:
    """Exact ``<O>`` on ``wire`` for ``O`` in {Z, X}; shape ``(B,)``."""
    observable = observable.upper()
    if observable not in ("Z", "X"):
        raise ValueError(f"unsupported observable {observable!r}")
    p = outcome_probabilities(state, wire, MeasBasis(observable))
    return p[:, 0] - p[:, 1]


def fidelity(a: Statevector, b: Statevector) -> np.ndarray:
    """``|<a|b>|^2`` per repetition."""
    x, y = _batched(a, b)
    return np.abs(np.sum(np.conj(x) * y, axis=1)) ** 2


def density_matrix(state: Statevector) -> np.ndarray:
    """Density matrices, shape ``(B, d, d)``."""
    return state.amps[:, :, None] * np.conj(state.amps[:, None, :])


class DensityAccumulator:
    """Weighted mixture ``sum_i w_i |psi_i><psi_i|``."""

    def __init__(self, n_qubits: int):
        self.n_qubits = n_qubits
        dim = 1 << n_qubits
        self.matrix = np.zeros((dim, dim), dtype=complex)
        self.total_weight = 0.0
        self.samples = 0

    def add(self, state: Statevector, weight) -> DensityAccumulator:
        if state.n_qubits != self.n_qubits:
            raise ValueError("dimension mismatch")
        w = np.broadcast_to(np.asarray(weight, dtype=float), (state.batch,))
        if np.any((w < 0) | (w > 1)):
            raise ValueError("weights must lie in [0, 1]")
        self.matrix += np.einsum("b,bi,bj->ij", w, state.amps, np.conj(state.amps))
        self.total_weight += float(w.sum())
        self.samples += state.batch
        return self

    def finalize(self, tol: float = 1e-10) -> np.ndarray:
        if abs(self.total_weight - 1.0) > tol:
            raise ValueError(f"weights sum to {self.total_weight}, not 1")
        return self.matrix.copy()


def accumulate_density(acc: DensityAccumulator, state: Statevector, weight) -> DensityAccumulator:
    return acc.add(state, weight)


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """``0.5 * ||a - b||_1`` computed from the eigenvalues of ``a - b``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a - b))))


class Register:
    """A product of independently evolving :class:`Statevector` blocks.

    Wires are addressed by hashable labels.  Blocks merge when a two-qubit
    gate couples them and shrink when a measured wire is discarded, so a
    register whose qubits are only pairwise entangled never pays for the full
    tensor product.
    """

    def __init__(self, batch: int = 1):
        self.batch = batch
        self._blocks: dict[int, tuple[Statevector, list[Hashable]]] = {}
        self._home: dict[Hashable, int] = {}
        self._next_id = 0

    @property
    def wires(self) -> list[Hashable]:
        return list(self._home)

    def __contains__(self, wire) -> bool:
        return wire in self._home

    def block_sizes(self) -> list[int]:
        return sorted(st.n_qubits for st, _ in self._blocks.values())

    def add_qubit(self, wire: Hashable, amps) -> None:
        self.add_block([wire], Statevector(amps))

    def add_block(self, wires: Sequence[Hashable], state: Statevector) -> None:
        if state.n_qubits != len(wires):
            raise ValueError("wire count does not match the state")
        for w in wires:
            if w in self._home:
                raise ValueError(f"wire {w!r} already present")
        state = state.broadcast(self.batch)
        bid = self._next_id
        self._next_id += 1
        self._blocks[bid] = (state, list(wires))
        for w in wires:
            self._home[w] = bid

    def _locate(self, wire) -> tuple[int, int]:
        try:
            bid = self._home[wire]
        except KeyError:
            raise KeyError(f"unknown wire {wire!r}") from None
        return bid, self._blocks[bid][1].index(wire)

    def _join(self, a, b) -> int:
        ba, bb = self._home[a], self._home[b]
        if ba == bb:
            return ba
        sa, wa = self._blocks.pop(ba)
        sb, wb = self._blocks.pop(bb)
        merged = kron(sa, sb)
        self._blocks[ba] = (merged, wa + wb)
        for w in wb:
            self._home[w] = ba
        return ba

    def apply_1q(self, wire, gate, *, check: bool = True) -> None:
        bid, pos = self._locate(wire)
        st, ws = self._blocks[bid]
        self._blocks[bid] = (apply_1q(st, gate, pos, check=check), ws)

    def apply_2q(self, kind: str, control, target) -> None:
        self._locate(control)
        self._locate(target)
        bid = self._join(control, target)
        st, ws = self._blocks[bid]
        self._blocks[bid] = (apply_2q(st, kind, ws.index(control), ws.index(target)), ws)

    def measure(self, wire, basis: MeasBasis, rng, *, forced=None, discard: bool = True) -> np.ndarray:
        bid, pos = self._locate(wire)
        st, ws = self._blocks[bid]
        outcomes, post = measure(st, pos, basis, rng, forced=forced, discard=discard)
        if discard:
            del self._home[wire]
            ws = [w for w in ws if w != wire]
            if ws:
                self._blocks[bid] = (post, ws)
            else:
                del self._blocks[bid]
        else:
            self._blocks[bid] = (post, ws)
        return outcomes

    def probabilities(self, wire, basis: MeasBasis) -> np.ndarray:
        bid, pos = self._locate(wire)
        return outcome_probabilities(self._blocks[bid][0], pos, basis)

    def expectation(self, wire, observable: str = "Z") -> np.ndarray:
        bid, pos = self._locate(wire)
        return expectation(self._blocks[bid][0], pos, observable)

    def state(self, wires: Iterable[Hashable] | None = None) -> Statevector:
        """Joint state of ``wires`` in the requested order.

        The requested wires must not share a block with any wire left out.
        """
        wires = list(self._home) if wires is None else list(wires)
        bids = []
        for w in wires:
            bid = self._home[w]
            if bid not in bids:
                bids.append(bid)
        order: list[Hashable] = []
        joint = Statevector(np.ones((self.batch, 1), dtype=complex))
        for bid in bids:
            st, ws = self._blocks[bid]
            joint = kron(joint, st)
            order.extend(ws)
        if sorted(map(repr, order)) != sorted(map(repr, wires)):
            raise ValueError("requested wires are entangled with wires outside the selection")
        n = len(order)
        t = joint.amps.reshape((self.batch,) + (2,) * n)
        perm = [0] + [1 + order.index(w) for w in wires]
        return Statevector(np.transpose(t, perm).reshape(self.batch, -1))
