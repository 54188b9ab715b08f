from __future__ import annotations

import numpy as np
import pytest

from blindvqa import patterns

ACCEPTANCE_LINES: list[str] = []

# ---------------------------------------------------------------- dense oracles
# Written with plain Kronecker products so they share no code with qsim.

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def rz(t):
    return np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])


def rx(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def ry(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def embed(u: np.ndarray, wire: int, n: int) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for q in range(n):
        out = np.kron(out, u if q == wire else I2)
    return out


def controlled(kind: str, control: int, target: int, n: int) -> np.ndarray:
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    g = X if kind == "cx" else Z
    a = embed(p0, control, n)
    b = embed(p1, control, n) @ embed(g, target, n)
    return a + b


def dense_state(circuit: patterns.SourceCircuit) -> np.ndarray:
    n = circuit.w
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    for g in circuit.all_ops:
        if g.name in ("cx", "cz"):
            psi = controlled(g.name, g.wires[0], g.wires[1], n) @ psi
        else:
            psi = embed(g.unitary(), g.wires[0], n) @ psi
    return psi


def dense_expectations(circuit: patterns.SourceCircuit, observables=None) -> np.ndarray:
    psi = dense_state(circuit)
    obs = observables or ["Z"] * circuit.w
    return np.array(
        [np.real(np.conj(psi) @ embed(Z if o == "Z" else X, q, circuit.w) @ psi) for q, o in enumerate(obs)]
    )


def random_unitary(rng: np.random.Generator) -> np.ndarray:
    m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(m)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng: np.random.Generator, n: int = 1) -> np.ndarray:
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


SINGLE_KINDS = ("h", "x", "z", "s", "t", "rx", "ry", "rz", "u")


def random_circuit(rng: np.random.Generator, w: int, n_gates: int, two_qubit_share: float = 0.4) -> patterns.SourceCircuit:
    ops = []
    for _ in range(n_gates):
        if w > 1 and rng.random() < two_qubit_share:
            a, b = rng.choice(w, size=2, replace=False)
            ops.append(patterns.Gate(str(rng.choice(["cx", "cz"])), (int(a), int(b))))
            continue
        kind = str(rng.choice(SINGLE_KINDS))
        q = int(rng.integers(w))
        if kind == "u":
            ops.append(patterns.Gate.u(q, random_unitary(rng)))
        elif kind.startswith("r"):
            ops.append(patterns.Gate(kind, (q,), angle=float(rng.uniform(-np.pi, np.pi))))
        else:
            ops.append(patterns.Gate(kind, (q,)))
    return patterns.SourceCircuit(w, tuple(ops))


def fidelity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(np.sum(np.conj(a) * b, axis=-1)) ** 2


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def acceptance_line():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
