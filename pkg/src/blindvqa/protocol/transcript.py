"""Line-delimited message transcript with ordering checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

BELL_SENT = "BellSent"
RECV_STATUS = "RecvStatus"
S1S2 = "S1S2"
PHI_PRIME = "PhiPrime"
S3 = "S3"
OUTPUT_BITS = "OutputBits"
ABORT = "Abort"
EVENTS = (BELL_SENT, RECV_STATUS, S1S2, PHI_PRIME, S3, OUTPUT_BITS, ABORT)

# messages travelling from client to server, with the payload keys they may carry
SERVER_BOUND = {RECV_STATUS: ("status",), PHI_PRIME: ("phi_prime",)}
HEADER = ("run", "seq", "seed", "event")


class TranscriptError(ValueError):
    pass


@dataclass
class Transcript:
    """Ordered event records.

    Each record starts with ``run``, ``seq`` (monotone over the whole
    transcript), ``seed`` and ``event``, followed by the event payload.
    """

    seed: int | None = None
    records: list[dict] = field(default_factory=list)

    def record(self, run: int, event: str, **payload) -> dict:
        if event not in EVENTS:
            raise TranscriptError(f"unknown event {event!r}")
        rec = {"run": int(run), "seq": len(self.records), "seed": self.seed, "event": event}
        rec.update(payload)
        self.records.append(rec)
        return rec

    def __len__(self) -> int:
        return len(self.records)

    def events(self, run: int | None = None) -> list[dict]:
        return [r for r in self.records if run is None or r["run"] == run]

    def runs(self) -> list[int]:
        return sorted({r["run"] for r in self.records})

    def server_bound(self) -> list[dict]:
        return [r for r in self.records if r["event"] in SERVER_BOUND]

    def dumps(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> Transcript:
        out = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TranscriptError(f"line {lineno}: {exc.msg}") from exc
            if tuple(rec)[:4] != HEADER:
                raise TranscriptError(f"line {lineno}: header fields out of order")
            out.records.append(rec)
        if out.records:
            out.seed = out.records[0]["seed"]
        return out

    @classmethod
    def read(cls, path: str | Path) -> Transcript:
        return cls.loads(Path(path).read_text())

    def validate(self) -> None:
        """Check sequence numbers and the per-gadget message order of every run.

        Per gadget: one or more ``BellSent``/``RecvStatus`` pairs, the last
        status being 0 (delivered), then exactly one ``S1S2``, ``PhiPrime`` and
        ``S3``.  A run ends with ``OutputBits``, optionally followed by
        ``Abort``.
        """
        for i, rec in enumerate(self.records):
            if rec["seq"] != i:
                raise TranscriptError(f"sequence gap at record {i}")
        for run in self.runs():
            _validate_run([r for r in self.records if r["run"] == run], run)


def _validate_run(recs: Iterable[dict], run: int) -> None:
    state = "bell"
    for rec in recs:
        ev = rec["event"]
        bad = TranscriptError(f"run {run}: unexpected {ev} at seq {rec['seq']} (state {state})")
        if state == "bell":
            if ev == BELL_SENT:
                state = "status"
            elif ev == OUTPUT_BITS:
                state = "done"
            else:
                raise bad
        elif state == "status":
            if ev != RECV_STATUS:
                raise bad
            state = "s1s2" if rec["status"] == 0 else "bell"
        elif state == "s1s2":
            if ev != S1S2:
                raise bad
            state = "phi"
        elif state == "phi":
            if ev != PHI_PRIME:
                raise bad
            state = "s3"
        elif state == "s3":
            if ev != S3:
                raise bad
            state = "bell"
        elif state == "done":
            if ev != ABORT:
                raise bad
            state = "aborted"
        else:
            raise bad
    if state not in ("done", "aborted"):
        raise TranscriptError(f"run {run}: transcript ends in state {state}")
