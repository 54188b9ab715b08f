"""End-to-end delegation of a compiled pattern and trap verification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import adqc
from ..patterns import COMPUTE, ClientSecrets, PatternCircuit
from . import transcript as tr
from .roles import Client, HonestServer

MODES = ("shots", "exact")
# an exact-mode trap passes when its corrected <Z> is +1 to this accuracy
EXACT_TRAP_TOL = 1e-9


@dataclass
class RunResult:
    """Outcome of a batch of delegations (leading axis = repetition).

    ``corrected_outputs`` holds frame-corrected compute-wire bits in shots
    mode; ``expectations`` holds frame-corrected compute-wire ``<Z>`` values
    in exact mode.  The unused one is None.
    """

    accepted: np.ndarray
    trap_failures: np.ndarray
    corrected_outputs: np.ndarray | None
    expectations: np.ndarray | None
    resends: np.ndarray
    frame: adqc.PauliFrame
    transcript: tr.Transcript | None = None

    @property
    def batch(self) -> int:
        return self.accepted.shape[0]

    @property
    def aborted(self) -> int:
        return int(np.count_nonzero(~self.accepted))

    def estimate(self) -> np.ndarray:
        """Per compute wire ``<Z>`` over accepted repetitions (aborted ones are discarded)."""
        keep = self.accepted
        if not keep.any():
            return np.full(self._w, np.nan)
        if self.expectations is not None:
            return self.expectations[keep].mean(axis=0)
        return (1.0 - 2.0 * self.corrected_outputs[keep]).mean(axis=0)

    @property
    def _w(self) -> int:
        data = self.expectations if self.expectations is not None else self.corrected_outputs
        return data.shape[1]


def verify_traps(output_bits: np.ndarray, secrets: ClientSecrets, frame: adqc.PauliFrame) -> tuple[np.ndarray, np.ndarray]:
    """Frame-correct the raw bits and compare every trap with its expected value.

    Returns ``(accepted, failures)`` per repetition.  X-traps were rotated
    back by the readout column, so both trap kinds expect 0.
    """
    corrected = np.asarray(output_bits, dtype=np.uint8) ^ frame.x
    traps = secrets.trap_map != COMPUTE
    failures = np.count_nonzero((corrected != secrets.expected) & traps, axis=1)
    return failures == 0, failures


def _gather(values: np.ndarray, wires: np.ndarray) -> np.ndarray:
    return np.take_along_axis(values, wires, axis=1)


def run_delegation(
    pattern: PatternCircuit,
    secrets: ClientSecrets,
    server: HonestServer | None = None,
    channel: adqc.LossyChannel | None = None,
    rng: np.random.Generator | None = None,
    *,
    mode: str = "shots",
    transcript: tr.Transcript | None = None,
    run_offset: int = 0,
) -> RunResult:
    """Run every repetition of ``pattern`` through the client/server exchange.

    Parameters
    ----------
    server
        Defaults to an :class:`HonestServer`.
    channel
        Lossy channel for the Bell halves; ``None`` means lossless.
    mode
        'shots' samples the output measurements; 'exact' reads the output
        ``<Z>`` from the amplitudes.  Gadget outcomes are sampled either way.
    transcript
        If given, one record per message per repetition is appended; run ids
        start at ``run_offset``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rng = rng if rng is not None else np.random.default_rng()
    server = server if server is not None else HonestServer()
    channel = channel if channel is not None else adqc.LossyChannel(0.0, rng)
    batch = pattern.batch
    runs = range(run_offset, run_offset + batch)
    log = transcript is not None

    client = Client(pattern, secrets, rng)
    server.start(pattern.public, batch, rng)
    resends = np.zeros(batch, dtype=np.int64)

    for step in client.cursor.steps:
        tag = step[0]
        if tag == "cz":
            server.apply_cz()
            client.note_cz()
        elif tag == "bell":
            pair = server.send_bell()
            attempts = adqc.transmit(channel, batch)
            resends += attempts - 1
            server.receive_status(attempts)
            if log:
                for b, run in enumerate(runs):
                    for status in adqc.recv_statuses(attempts[b]):
                        transcript.record(run, tr.BELL_SENT, column=step[1], wire=step[2], slot=step[3])
                        transcript.record(run, tr.RECV_STATUS, status=status)
            server.attach(client.receive_bell(pair))
        elif tag == "phi":
            s1, s2 = server.measure_s1s2()
            phi_prime = np.broadcast_to(client.encrypted_angle(s1, s2), (batch,))
            s3 = server.measure_s3(phi_prime)
            client.receive_s3(s3)
            if log:
                for b, run in enumerate(runs):
                    transcript.record(run, tr.S1S2, s1=int(s1[b]), s2=int(s2[b]))
                    transcript.record(run, tr.PHI_PRIME, phi_prime=float(phi_prime[b]))
                    transcript.record(run, tr.S3, s3=int(s3[b]))
        elif tag == "output":
            break

    frame = client.finish()
    compute = pattern.compute_wires()
    if mode == "exact":
        z = server.output_expectations()
        corrected = z * (1.0 - 2.0 * frame.x)
        traps = secrets.trap_map != COMPUTE
        failures = np.count_nonzero(traps & (corrected < 1.0 - EXACT_TRAP_TOL), axis=1)
        accepted = failures == 0
        result = RunResult(accepted, failures, None, _gather(corrected, compute), resends, frame, transcript)
        raw = None
    else:
        raw = server.measure_outputs()
        accepted, failures = verify_traps(raw, secrets, frame)
        outputs = _gather(raw ^ frame.x, compute)
        result = RunResult(accepted, failures, outputs, None, resends, frame, transcript)

    if log:
        for b, run in enumerate(runs):
            bits = [int(v) for v in raw[b]] if raw is not None else None
            transcript.record(run, tr.OUTPUT_BITS, bits=bits)
            if not accepted[b]:
                transcript.record(run, tr.ABORT, reason="trap failure", failures=int(failures[b]))
    return result
