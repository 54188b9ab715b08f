"""Variational training driven by parameter-shift gradients.

Each iteration evaluates ``G = 2L + 1`` circuits: the current parameters
followed by the ``+pi/2`` shift of every parameter and then the ``-pi/2``
shift of every parameter.  The scalar ``E`` is a weighted sum of the
per-wire expectation values (by default their mean).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from . import adqc, patterns
from .patterns import SourceCircuit
from .protocol import HonestServer, run_delegation

SHIFT = np.pi / 2
COST_KINDS = ("identity", "mse", "cross_entropy")
# keeps log() finite when a shot estimate sits at the boundary
PROB_CLIP = 1e-12


# ---------------------------------------------------------------- costs


@dataclass(frozen=True)
class Cost:
    """Cost ``f(E)`` with its analytic derivative.

    ``mse`` is ``(E - target)^2``.  ``cross_entropy`` treats
    ``p = (1 + E)/2`` as the probability of label 1 and ``target`` as the
    label.
    """

    kind: str = "identity"
    target: float = 0.0

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"cost kind must be one of {COST_KINDS}")
        if self.kind == "cross_entropy" and not 0.0 <= self.target <= 1.0:
            raise ValueError("cross-entropy labels lie in [0, 1]")

    def __call__(self, e: float) -> float:
        if self.kind == "identity":
            return float(e)
        if self.kind == "mse":
            return float((e - self.target) ** 2)
        p = np.clip((1.0 + e) / 2.0, PROB_CLIP, 1.0 - PROB_CLIP)
        y = self.target
        return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))

    def derivative(self, e: float) -> float:
        if self.kind == "identity":
            return 1.0
        if self.kind == "mse":
            return float(2.0 * (e - self.target))
        p = np.clip((1.0 + e) / 2.0, PROB_CLIP, 1.0 - PROB_CLIP)
        y = self.target
        return float(-0.5 * (y / p - (1.0 - y) / (1.0 - p)))


# ---------------------------------------------------------------- parameter shift


def shifted_circuits(source: SourceCircuit, theta: Sequence[float]) -> list[SourceCircuit]:
    """``[theta, theta_{1+}, ..., theta_{L+}, theta_{1-}, ..., theta_{L-}]``, bound."""
    theta = np.asarray(theta, dtype=float)
    n_params = len(theta)
    used = source.parameter_indices
    if used and used[-1] >= n_params:
        raise patterns.CompileError(f"dangling parameter index {used[-1]} (L = {n_params})")
    out = [source.bind(theta)]
    for sign in (1.0, -1.0):
        for j in range(n_params):
            shifted = theta.copy()
            shifted[j] += sign * SHIFT
            out.append(source.bind(shifted))
    return out


def gradient(e_values: Sequence[float], f_prime: float) -> np.ndarray:
    """``dC/dtheta_j = f'(E) (E(theta_{j+}) - E(theta_{j-})) / 2``."""
    e = np.asarray(e_values, dtype=float)
    if e.ndim != 1 or len(e) % 2 != 1:
        raise ValueError("expected 2L + 1 expectation values")
    n_params = (len(e) - 1) // 2
    return 0.5 * f_prime * (e[1 : 1 + n_params] - e[1 + n_params :])


# ---------------------------------------------------------------- optimisers


@dataclass(frozen=True)
class AdamHyper:
    step: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.step, self.beta1, self.beta2, self.eps) <= 0 or max(self.beta1, self.beta2) >= 1:
            raise ValueError("Adam needs a positive step, decays in (0, 1) and a positive epsilon")


@dataclass(frozen=True)
class AdamState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def start(cls, theta: Sequence[float]) -> AdamState:
        theta = np.asarray(theta, dtype=float)
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta))


def adam_step(state: AdamState, grad: Sequence[float], hyper: AdamHyper = AdamHyper()) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected adaptive-moment update."""
    g = np.asarray(grad, dtype=float)
    t = state.t + 1
    m = hyper.beta1 * state.m + (1 - hyper.beta1) * g
    v = hyper.beta2 * state.v + (1 - hyper.beta2) * g**2
    m_hat = m / (1 - hyper.beta1**t)
    v_hat = v / (1 - hyper.beta2**t)
    theta = state.theta - hyper.step * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return AdamState(theta, m, v, t), theta


# ---------------------------------------------------------------- runners


class Runner(Protocol):
    def evaluate(
        self, circuits: Sequence[SourceCircuit], observables: Sequence[str], repetitions: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-circuit, per-wire expectations ``(G, w)`` and aborted-run counts ``(G,)``."""
        ...


@dataclass
class DirectRunner:
    """Simulates the source circuits directly (no delegation)."""

    mode: str = "exact"

    def evaluate(self, circuits, observables, repetitions, rng):
        rows = []
        for circ in circuits:
            exact = patterns.source_expectations(circ, observables)
            if self.mode == "exact":
                rows.append(exact)
            else:
                p1 = (1.0 - exact) / 2.0
                bits = rng.random((repetitions, len(exact))) < p1
                rows.append((1.0 - 2.0 * bits).mean(axis=0))
        return np.array(rows), np.zeros(len(circuits), dtype=np.int64)


@dataclass
class BlindRunner:
    """Delegates every circuit through the full protocol, ``R`` repetitions each."""

    mode: str = "exact"
    loss_prob: float = 0.0
    server_factory: type = HonestServer
    layout: str | None = None
    chunk: int = 5000
    resends: int = field(default=0, init=False)

    def evaluate(self, circuits, observables, repetitions, rng):
        batch_total = 1 if self.mode == "exact" else repetitions
        rows, aborted = [], []
        for circ in circuits:
            sums = np.zeros(circ.w)
            kept = bad = 0
            for start in range(0, batch_total, self.chunk):
                batch = min(self.chunk, batch_total - start)
                pattern, secrets = patterns.compile(circ, rng, batch=batch, observables=observables, layout=self.layout)
                channel = adqc.LossyChannel(self.loss_prob, rng)
                res = run_delegation(pattern, secrets, self.server_factory(), channel, rng, mode=self.mode)
                self.resends += channel.resend_count
                values = res.expectations if self.mode == "exact" else 1.0 - 2.0 * res.corrected_outputs
                sums += values[res.accepted].sum(axis=0)
                kept += int(res.accepted.sum())
                bad += res.aborted
            rows.append(sums / kept if kept else np.full(circ.w, np.nan))
            aborted.append(bad)
        return np.array(rows), np.array(aborted, dtype=np.int64)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class VqaConfig:
    theta: tuple[float, ...]
    eta: float = 0.1
    iterations: int = 10
    repetitions: int = 1
    observables: tuple[str, ...] | None = None
    weights: tuple[float, ...] | None = None
    cost: Cost = Cost()
    optimizer: str = "gd"
    adam: AdamHyper = AdamHyper()

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if self.eta < 0:
            raise ValueError("learning rate must be non-negative")
        if self.iterations < 0 or self.repetitions < 1:
            raise ValueError("need iterations >= 0 and repetitions >= 1")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError("optimizer must be 'gd' or 'adam'")

    @property
    def n_params(self) -> int:
        return len(self.theta)

    @property
    def n_circuits(self) -> int:
        return 2 * self.n_params + 1


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    theta: np.ndarray
    cost: float
    expectation: float
    gradient: np.ndarray
    aborted: int


def combine(per_wire: np.ndarray, weights: Sequence[float] | None) -> np.ndarray:
    """Scalar ``E`` per circuit from per-wire expectations."""
    w = per_wire.shape[1]
    c = np.full(w, 1.0 / w) if weights is None else np.asarray(weights, dtype=float)
    if c.shape != (w,):
        raise ValueError("need one weight per compute wire")
    return per_wire @ c


def train(config: VqaConfig, source: SourceCircuit, runner: Runner, rng: np.random.Generator) -> list[TrainRecord]:
    """Gradient-descent (or Adam) loop; one record per iteration.

    Each record stores the parameters the iteration was evaluated at.
    """
    obs = config.observables or ("Z",) * source.w
    theta = np.array(config.theta)
    adam = AdamState.start(theta)
    records = []
    for it in range(config.iterations):
        circuits = shifted_circuits(source, theta)
        per_wire, aborted = runner.evaluate(circuits, obs, config.repetitions, rng)
        e = combine(per_wire, config.weights)
        cost = config.cost(e[0])
        if not np.isfinite(cost):
            raise FloatingPointError(f"cost is not finite at iteration {it} (every run aborted?)")
        grad = gradient(e, config.cost.derivative(e[0]))
        records.append(TrainRecord(it, theta.copy(), cost, float(e[0]), grad, int(aborted.sum())))
        if config.optimizer == "adam":
            adam, theta = adam_step(replace(adam, theta=theta), grad, config.adam)
        else:
            theta = theta - config.eta * grad
    return records


def toy_circuit() -> SourceCircuit:
    """``RX(theta_0)|0>`` on one qubit, whose ``<Z>`` is ``cos theta_0``."""
    return SourceCircuit(1, (patterns.Gate("rx", (0,), param=0),))
