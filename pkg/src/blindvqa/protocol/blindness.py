"""Exact blindness audit by enumerating client secrets and outcome branches."""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .. import adqc, qsim
from ..qsim import MeasBasis, Register

MAXIMALLY_MIXED = np.eye(2, dtype=complex) / 2.0


@dataclass(frozen=True)
class BlindnessReport:
    bell_trace_distance: float
    phi_histograms: dict[int, tuple[int, ...]]
    phi_uniform: bool
    phi_shift_consistent: bool
    output_trace_distance: float
    view_distribution_distance: float
    n_views: int

    def passed(self, tol: float = 1e-12) -> bool:
        return (
            self.bell_trace_distance < tol
            and self.phi_uniform
            and self.phi_shift_consistent
            and self.output_trace_distance < 1e-10
            and self.view_distribution_distance < 1e-10
        )


def bell_half_average() -> np.ndarray:
    """Server-held Bell half averaged over ``k`` and the Born-weighted ``s0``."""
    acc = qsim.DensityAccumulator(1)
    pair = adqc.bell_pair(1)
    for k in range(8):
        probs = qsim.outcome_probabilities(pair, 1, MeasBasis.m(-k * adqc.QUARTER_PI))[0]
        for s0 in (0, 1):
            _, remote = adqc.client_bell_measure(pair, np.array([k]), None, forced=s0, check=True)
            acc.add(remote, probs[s0] / 8.0)
    return acc.finalize()


def phi_prime_histogram(phi_units: int, s0: int = 0, s1: int = 0) -> tuple[int, ...]:
    """Counts of ``phi'`` (units of pi/4) over all 16 ``(k, r)``."""
    counts = Counter(
        int(adqc.encrypted_angle_units(phi_units, s1, k, s0, r)) for k in range(8) for r in range(2)
    )
    return tuple(counts.get(v, 0) for v in range(8))


def phi_prime_support(phi: float, s0: int = 0, s1: int = 0) -> np.ndarray:
    """Sorted ``phi'`` values (radians) over all ``(k, r)`` for an arbitrary ``phi``."""
    k, r = np.meshgrid(np.arange(8), np.arange(2), indexing="ij")
    return np.sort(np.ravel(adqc.encrypted_angle(phi, s1, k, s0, r)))


def _support_shift_consistent(phi_a: float, phi_b: float, tol: float = 1e-9) -> bool:
    """The two supports coincide after rotating one by ``phi_a - phi_b``."""
    a = phi_prime_support(phi_a)
    b = np.sort(np.mod(phi_prime_support(phi_b) - (phi_a - phi_b), adqc.TWO_PI))
    diff = np.abs(a - b)
    return bool(np.all(np.minimum(diff, adqc.TWO_PI - diff) < tol))


def _server_views(psi: np.ndarray, phis: tuple[float, float]):
    """Enumerate two gadgets on one wire over all secrets and branches.

    Returns the server's view per combination (outcomes and encrypted angles
    in units of pi/4), its probability, and the uncorrected output state.
    """
    combos = np.array(list(itertools.product(range(8), range(2), range(8), range(2), *[range(2)] * 8)), dtype=np.int64)
    batch = combos.shape[0]
    k1, r1, k2, r2 = combos[:, 0], combos[:, 1], combos[:, 2], combos[:, 3]
    outcomes = combos[:, 4:].reshape(batch, 2, 4)  # (gadget, [s0, s1, s2, s3])
    weight = np.full(batch, 1.0 / 256.0)
    reg = Register(batch)
    reg.add_qubit("R", psi)
    frame = adqc.PauliFrame.zeros(1, batch)
    view = []
    for g, (k, r, phi) in enumerate(((k1, r1, phis[0]), (k2, r2, phis[1]))):
        s0f, s1f, s2f, s3f = (outcomes[:, g, i] for i in range(4))
        pair = adqc.bell_pair(batch)
        weight = weight * qsim.outcome_probabilities(pair, 1, MeasBasis.m(-k * adqc.QUARTER_PI))[np.arange(batch), s0f]
        _, a1 = adqc.client_bell_measure(pair, k, None, forced=s0f)
        adqc.attach_ancillas(reg, a1)
        target = adqc.adaptive_angle(frame, 0, phi)
        phi_units = np.rint(target / adqc.QUARTER_PI).astype(np.int64)
        pp = adqc.encrypted_angle_units(phi_units, s1f, k, s0f, r)
        for anc, basis, forced in (
            ("A1", MeasBasis.z(), s1f),
            ("A2", MeasBasis.z(), s2f),
            ("A3", MeasBasis.m(pp * adqc.QUARTER_PI), s3f),
        ):
            reg.apply_2q("CX", "R", anc)
            reg.apply_1q("R", qsim.H, check=False)
            weight = weight * reg.probabilities(anc, basis)[np.arange(batch), forced]
            reg.measure(anc, basis, None, forced=forced)
        frame = adqc.frame_after_j(frame, 0, s3f.astype(np.uint8) ^ r.astype(np.uint8))
        view += [s1f, s2f, pp, s3f]
    keys = np.stack(view, axis=1)
    return keys, weight, reg.state(["R"])


def conditional_output_audit(psi: np.ndarray, phis: tuple[float, float]) -> tuple[float, dict]:
    """Largest trace distance to ``I/2`` of the server's output state
    conditioned on its view, and the distribution of views."""
    keys, weight, state = _server_views(psi, phis)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    rho = np.einsum("b,bi,bj->bij", weight, state.amps, np.conj(state.amps))
    sums = np.zeros((len(uniq), 2, 2), dtype=complex)
    np.add.at(sums, inverse, rho)
    mass = np.bincount(inverse, weights=weight, minlength=len(uniq))
    worst = 0.0
    for m, s in zip(mass, sums):
        if m > 1e-15:
            worst = max(worst, qsim.trace_distance(s / m, MAXIMALLY_MIXED))
    dist = {tuple(int(v) for v in u): float(m) for u, m in zip(uniq, mass) if m > 1e-15}
    return worst, dist


def blindness_audit(
    phis_a: tuple[float, float] = (0.0, np.pi / 2),
    phis_b: tuple[float, float] = (3 * np.pi / 4, -np.pi / 4),
    psi_a: np.ndarray | None = None,
    psi_b: np.ndarray | None = None,
) -> BlindnessReport:
    """Exact audit of what the server can learn.

    1. The Bell half it keeps is maximally mixed once ``k`` and ``s0`` are
       averaged.
    2. The encrypted angles are uniform on the pi/4 grid whatever the target
       angle, and their supports only shift with it.
    3. For a wire driven by two gadgets, every server view (outcomes and
       encrypted angles) leaves the uncorrected output maximally mixed, and
       the distribution of views is the same for two different secret
       computations ``(psi_a, phis_a)`` and ``(psi_b, phis_b)``.  Target
       angles must lie on the pi/4 grid.
    """
    psi_a = qsim.KET0 if psi_a is None else psi_a
    psi_b = qsim.KET_PLUS if psi_b is None else psi_b
    bell = qsim.trace_distance(bell_half_average(), MAXIMALLY_MIXED)
    hists = {u: phi_prime_histogram(u) for u in range(8)}
    uniform = all(h == (2,) * 8 for h in hists.values()) and all(
        phi_prime_histogram(u, s0, s1) == (2,) * 8 for u in range(8) for s0 in (0, 1) for s1 in (0, 1)
    )
    shift_ok = _support_shift_consistent(0.0, np.pi / 2) and _support_shift_consistent(0.3, 2.1)
    worst_a, dist_a = conditional_output_audit(psi_a, phis_a)
    worst_b, dist_b = conditional_output_audit(psi_b, phis_b)
    views = set(dist_a) | set(dist_b)
    tv = 0.5 * sum(abs(dist_a.get(v, 0.0) - dist_b.get(v, 0.0)) for v in views)
    return BlindnessReport(bell, hists, uniform, shift_ok, max(worst_a, worst_b), tv, len(views))
