from __future__ import annotations

import itertools
import json
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blindvqa import adqc, patterns, qsim
from blindvqa.patterns import X_TRAP, Z_TRAP, Gate, SourceCircuit
from blindvqa.protocol import (
    AttackSpec,
    Client,
    HonestServer,
    PauliAttackServer,
    ProtocolError,
    Transcript,
    TranscriptError,
    adversary_apply,
    aggregate_bound,
    bell_half_average,
    blindness_audit,
    detection_experiment,
    escape_probability_enumerated,
    escape_probability_exact,
    phi_prime_histogram,
    role_assignments,
    run_delegation,
    species_bound,
    verify_traps,
)
from blindvqa.protocol.transcript import SERVER_BOUND

from conftest import dense_expectations, random_circuit

H_CIRCUIT = SourceCircuit(1, (Gate("h", (0,)),))


def compile_run(src, rng, batch, **kwargs):
    pattern, secrets = patterns.compile(src, rng, batch=batch)
    return pattern, secrets, run_delegation(pattern, secrets, rng=rng, **kwargs)


class TestDelegation:
    def test_h_statistics(self):
        rng = np.random.default_rng(7)
        _, _, result = compile_run(H_CIRCUIT, rng, 10_000)
        assert result.accepted.all()
        assert abs(result.estimate()[0]) < 5 / np.sqrt(10_000)

    def test_honest_always_accepts(self, rng):
        _, _, result = compile_run(random_circuit(rng, 2, 6), rng, 2000)
        assert result.accepted.all() and (result.trap_failures == 0).all()

    def test_exact_mode_matches_source(self, rng):
        src = random_circuit(rng, 2, 6)
        _, _, result = compile_run(src, rng, 3, mode="exact")
        assert np.allclose(result.expectations, dense_expectations(src), atol=1e-9)

    def test_lossy_channel_completes(self):
        rng = np.random.default_rng(3)
        channel = adqc.LossyChannel(0.05, rng)
        pattern, secrets = patterns.compile(H_CIRCUIT, rng, batch=500)
        result = run_delegation(pattern, secrets, channel=channel, rng=rng)
        assert result.accepted.all()
        assert result.resends.sum() == channel.resend_count > 0

    def test_gadget_secrets_recorded(self, rng):
        pattern, secrets, _ = compile_run(H_CIRCUIT, rng, 4)
        assert len(secrets.gadgets) == pattern.public.n_gadgets
        for gs in secrets.gadgets:
            assert gs.s0 is not None and (gs.k < 8).all() and (gs.r < 2).all()

    def test_trap_attack_rejected(self, rng):
        pattern, secrets = patterns.compile(random_circuit(rng, 2, 4), rng, batch=200)
        # one Z on every wire: every X-trap flips in every repetition
        result = run_delegation(pattern, secrets, PauliAttackServer(AttackSpec(("Z",) * 6)), rng=rng)
        assert not result.accepted.any()

    @pytest.mark.parametrize("pauli, kind", [("X", Z_TRAP), ("Z", X_TRAP), ("XZ", Z_TRAP), ("XZ", X_TRAP)])
    def test_attack_on_trap_wire_always_caught(self, rng, pauli, kind):
        pattern, secrets = patterns.compile(H_CIRCUIT, rng, batch=400)
        result = run_delegation(pattern, secrets, PauliAttackServer(AttackSpec((pauli,) + ("I",) * 3)), rng=rng)
        hit = pattern.trap_map[:, 0] == kind
        assert hit.any() and not result.accepted[hit].any()


class TestStateMachines:
    def test_server_out_of_order(self, rng):
        pattern, _ = patterns.compile(H_CIRCUIT, rng)
        server = HonestServer()
        server.start(pattern.public, 1, rng)
        with pytest.raises(ProtocolError):
            server.measure_s1s2()

    def test_client_out_of_order(self, rng):
        pattern, secrets = patterns.compile(H_CIRCUIT, rng)
        client = Client(pattern, secrets, rng)
        with pytest.raises(ProtocolError):
            client.receive_s3(np.zeros(1, dtype=np.uint8))

    def test_cz_before_gadgets(self, rng):
        pattern, secrets = patterns.compile(H_CIRCUIT, rng)
        with pytest.raises(ProtocolError):
            Client(pattern, secrets, rng).note_cz()

    def test_server_not_started(self):
        with pytest.raises(ProtocolError):
            HonestServer().send_bell()


class TestTranscript:
    def run(self, rng, loss=0.2, batch=2):
        tr = Transcript(seed=9)
        pattern, secrets = patterns.compile(H_CIRCUIT, rng, batch=batch)
        run_delegation(pattern, secrets, channel=adqc.LossyChannel(loss, rng), rng=rng, transcript=tr)
        return pattern, tr

    def test_sequence_and_counts(self, rng):
        pattern, tr = self.run(rng)
        tr.validate()
        for run in tr.runs():
            events = [r["event"] for r in tr.events(run)]
            for name in ("S1S2", "PhiPrime", "S3"):
                assert events.count(name) == pattern.public.n_gadgets
            assert events.count("BellSent") == events.count("RecvStatus") >= pattern.public.n_gadgets

    def test_round_trip(self, rng, tmp_path):
        _, tr = self.run(rng)
        path = tmp_path / "t.log"
        tr.write(path)
        again = Transcript.read(path)
        again.validate()
        assert again.records == tr.records
        first = json.loads(path.read_text().splitlines()[0])
        assert list(first)[:4] == ["run", "seq", "seed", "event"]

    def test_tampered_order_detected(self, rng):
        _, tr = self.run(rng, loss=0.0, batch=1)
        recs = tr.records
        i = next(i for i, r in enumerate(recs) if r["event"] == "PhiPrime")
        recs[i], recs[i + 1] = recs[i + 1], recs[i]
        recs[i]["seq"], recs[i + 1]["seq"] = i, i + 1
        with pytest.raises(TranscriptError):
            tr.validate()

    def test_abort_recorded(self, rng):
        tr = Transcript(seed=1)
        pattern, secrets = patterns.compile(H_CIRCUIT, rng, batch=50)
        result = run_delegation(pattern, secrets, PauliAttackServer(AttackSpec(("X",) * 4)), rng=rng, transcript=tr)
        tr.validate()
        aborts = [r for r in tr.records if r["event"] == "Abort"]
        assert len(aborts) == result.aborted > 0

    def test_server_bound_messages_carry_no_secrets(self, rng):
        """Everything sent to the server is a status bit or an encrypted angle."""
        _, tr = self.run(rng)
        for rec in tr.server_bound():
            payload = {k: v for k, v in rec.items() if k not in ("run", "seq", "seed", "event")}
            assert set(payload) == set(SERVER_BOUND[rec["event"]])
        statuses = {r["status"] for r in tr.records if r["event"] == "RecvStatus"}
        assert statuses <= {0, 1}
        for rec in tr.records:
            assert not {"k", "r", "s0", "permutation", "trap_map", "theta"} & set(rec)


class TestVerifyTraps:
    def secrets(self, kinds):
        kinds = np.array([kinds], dtype=np.int8)
        return patterns.ClientSecrets(
            permutation=np.zeros_like(kinds),
            trap_map=kinds,
            h_positions=np.zeros_like(kinds),
            readout=np.zeros_like(kinds),
            expected=np.zeros(kinds.shape, dtype=np.uint8),
        )

    def test_all_nominal(self):
        frame = adqc.PauliFrame.zeros(4)
        accepted, failures = verify_traps(np.array([[1, 0, 0, 0]]), self.secrets([0, 1, 1, 2]), frame)
        assert accepted[0] and failures[0] == 0

    def test_flipped_z_trap(self):
        frame = adqc.PauliFrame.zeros(4)
        accepted, failures = verify_traps(np.array([[0, 1, 0, 0]]), self.secrets([0, 1, 1, 2]), frame)
        assert not accepted[0] and failures[0] == 1

    def test_frame_correction_applied(self):
        frame = adqc.PauliFrame.zeros(4)
        frame.x[0, 1] = 1
        accepted, _ = verify_traps(np.array([[0, 1, 0, 0]]), self.secrets([0, 1, 1, 2]), frame)
        assert accepted[0]


class TestAdversary:
    def test_identity(self, rng):
        state = qsim.Statevector(rng.normal(size=(1, 8)) + 0j)
        state = qsim.Statevector(state.amps / np.linalg.norm(state.amps))
        assert np.allclose(adversary_apply(state, AttackSpec.identity(3)).amps, state.amps)

    def test_x_flips(self):
        out = adversary_apply(qsim.Statevector.zero(3), AttackSpec(("I", "X", "I")))
        assert np.allclose(out.vector(), qsim.Statevector.from_bits([0, 1, 0]).vector())

    def test_xz_on_plus(self):
        out = adversary_apply(qsim.Statevector(qsim.KET_PLUS[None]), AttackSpec(("XZ",)))
        assert abs(np.vdot(out.vector(), qsim.KET_MINUS)) == pytest.approx(1.0)

    def test_x_preserves_plus(self):
        out = adversary_apply(qsim.Statevector(qsim.KET_PLUS[None]), AttackSpec(("X",)))
        assert abs(np.vdot(out.vector(), qsim.KET_PLUS)) == pytest.approx(1.0)

    def test_through_permutation(self):
        perm = np.array([[2, 0, 1]])  # logical 0 -> physical 2
        out = adversary_apply(qsim.Statevector.zero(3), AttackSpec(("I", "I", "X")), perm)
        assert np.allclose(out.vector(), qsim.Statevector.from_bits([1, 0, 0]).vector())

    def test_spec_counts(self):
        spec = AttackSpec.from_counts(9, a=2, b=1, c=3)
        assert (spec.a, spec.b, spec.c, spec.weight) == (2, 1, 3, 6)
        assert spec.weight <= 3 * max(spec.a, spec.b, spec.c)


def brute_force_escape(attack: AttackSpec) -> float:
    """Average over every permutation of the logical role list."""
    n = attack.n_wires
    w = n // 3
    roles = [0] * w + [1] * (n - 2 * w) + [2] * w
    ok = total = 0
    for perm in itertools.permutations(range(n)):
        kinds = [roles[perm.index(q)] for q in range(n)]
        good = all(
            k == 0 or (k == 1 and p in ("I", "Z")) or (k == 2 and p in ("I", "X")) for k, p in zip(kinds, attack.paulis)
        )
        ok += good
        total += 1
    return ok / total


class TestEscapeProbability:
    @pytest.mark.parametrize("counts, expected", [((1, 0, 0), 2 / 3), ((0, 0, 1), 1 / 3), ((0, 1, 0), 2 / 3)])
    def test_n6_examples(self, counts, expected):
        assert escape_probability_exact(6, counts) == pytest.approx(expected)

    @pytest.mark.parametrize("a", [1, 2, 3, 4])
    def test_pure_x_closed_form(self, a):
        assert escape_probability_exact(12, (a, 0, 0)) == pytest.approx(comb(8, a) / comb(12, a))

    @pytest.mark.parametrize(
        "paulis",
        [("X", "I", "I", "I", "I", "I"), ("X", "Z", "I", "I", "I", "I"), ("XZ", "X", "Z", "I", "I", "I"), ("X", "X", "Z", "Z", "I", "I")],
    )
    def test_matches_brute_force(self, paulis):
        attack = AttackSpec(paulis)
        assert escape_probability_exact(6, attack) == pytest.approx(brute_force_escape(attack))
        assert escape_probability_enumerated(attack) == pytest.approx(brute_force_escape(attack))

    @given(n=st.sampled_from([6, 12]), m=st.integers(1, 6), species=st.sampled_from(["X", "Z", "XZ"]))
    def test_below_bound(self, n, m, species):
        attack = AttackSpec((species,) * m + ("I",) * (n - m))
        p = escape_probability_exact(n, attack)
        assert p <= species_bound(attack) + 1e-12
        assert p <= (2 / 3) ** (m / 3) + 1e-12

    def test_padded_count_enumerated(self):
        attack = AttackSpec.from_counts(4, 1, 0, 0)
        assert escape_probability_exact(4, attack) == pytest.approx(brute_force_escape(attack))

    def test_odd_wire_count_rejected(self):
        with pytest.raises(ValueError):
            escape_probability_exact(9, (1, 0, 0))

    def test_role_assignment_count(self):
        assert len(role_assignments(12)) == 34650
        assert len(role_assignments(6, paired=True)) == 3 * 6

    @pytest.mark.parametrize(
        "paulis, expected",
        [
            (("X", "I", "I", "I", "I", "I"), 2 / 3),
            (("X", "X", "I", "I", "I", "I"), 4 / 9),
            (("X", "I", "X", "I", "I", "I"), 7 / 18),
        ],
    )
    def test_paired_constraint(self, paulis, expected):
        assert escape_probability_enumerated(AttackSpec(paulis), paired=True) == pytest.approx(expected)

    def test_aggregate_bound(self):
        assert aggregate_bound([3, 3]) == pytest.approx((2 / 3) ** 2)


class TestDetection:
    def test_identity_attack(self, rng):
        res = detection_experiment(6, AttackSpec.identity(6), 1000, rng)
        assert res.escape_rate == 1.0

    @pytest.mark.parametrize("counts", [(1, 0, 0), (0, 2, 0), (0, 0, 1), (1, 1, 1)])
    def test_ideal_model_matches_exact(self, counts):
        rng = np.random.default_rng(sum(counts))
        attack = AttackSpec.from_counts(12, *counts)
        res = detection_experiment(12, attack, 40_000, rng)
        assert abs(res.escape_rate - res.exact) < 3 * res.stderr + 1e-12

    @pytest.mark.parametrize("paulis", [("X", "X", "I", "I", "I", "I"), ("X", "I", "Z", "I", "I", "I")])
    def test_protocol_model_matches_paired_enumeration(self, paulis):
        rng = np.random.default_rng(17)
        res = detection_experiment(6, AttackSpec(paulis), 3000, rng, model="protocol")
        assert abs(res.escape_rate - res.exact) < 3 * res.stderr


class TestBlindness:
    def test_bell_half_is_maximally_mixed(self):
        assert qsim.trace_distance(bell_half_average(), np.eye(2) / 2) < 1e-12

    def test_histograms(self):
        assert phi_prime_histogram(0) == phi_prime_histogram(2) == (2,) * 8

    def test_full_audit(self):
        report = blindness_audit()
        assert report.passed()
        assert report.n_views > 1
