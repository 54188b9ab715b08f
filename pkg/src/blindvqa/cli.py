"""Command-line experiments: delegate, verify, loss, blindness, train.

Configuration comes from an optional JSON file; command-line flags override
it.  All randomness derives from one root seed through named sub-streams, one
per fixed-size chunk of trials, so ``--parallel`` never changes a result.

Exit codes: 0 success, 2 configuration error, 3 protocol abort, 4 channel
fault.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import adqc, patterns, qsim, vqa
from .patterns import CompileError, SourceCircuit
from .protocol import (
    AttackSpec,
    HonestServer,
    PauliAttackServer,
    ProtocolError,
    Transcript,
    blindness_audit,
    detection_experiment,
    escape_probability_enumerated,
    escape_probability_exact,
    run_delegation,
    species_bound,
)

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_CHANNEL = 0, 2, 3, 4
CHUNK = 10_000
SUMMARY_COLUMNS = (
    "experiment",
    "N",
    "M",
    "attack_weight",
    "trials",
    "escape_rate",
    "bound",
    "resends_mean",
    "accepted_rate",
    "seed",
)
PLOT_COLUMNS = ("series", "x", "y", "error")
DEFAULT_CIRCUIT = {"w": 1, "ops": [{"gate": "h", "wires": [0]}]}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- seeding and config


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Generator for sub-stream ``name``/``index`` of the root ``seed``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(name.encode()), index))
    return np.random.default_rng(ss)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


@dataclass
class Settings:
    """Resolved experiment settings (config file merged with flags)."""

    kind: str
    values: dict
    seed: int
    trials: int | None
    out: Path
    parallel: int

    def get(self, key: str, default: Any = None, cast: Callable | None = None):
        value = self.values.get(key, default)
        if cast is None or value is None:
            return value
        try:
            return cast(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for '{key}': {value!r}") from exc


def resolve(args: argparse.Namespace) -> Settings:
    values = load_config(args.config)
    for key in ("loss_prob", "mode", "model"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "malicious", False):
        values.setdefault("attack", {"counts": [1, 0, 0]})
    seed = args.seed if args.seed is not None else values.get("seed", 0)
    trials = args.trials if args.trials is not None else values.get("trials")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if trials is not None and (not isinstance(trials, int) or trials < 1):
        raise ConfigError("trials must be a positive integer")
    out = Path(args.out if args.out is not None else values.get("out", "."))
    parallel = args.parallel if args.parallel is not None else int(values.get("parallel", 1))
    return Settings(args.command, values, seed, trials, out, max(1, parallel))


def circuit_from(settings: Settings) -> SourceCircuit:
    spec = settings.values.get("circuit", DEFAULT_CIRCUIT)
    if isinstance(spec, str):
        try:
            spec = json.loads(Path(spec).read_text())
        except OSError as exc:
            raise ConfigError(f"circuit file {spec}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"circuit file:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return SourceCircuit.from_dict(spec)
    except (CompileError, TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid circuit: {exc}") from exc


def attack_from(spec, n_wires: int) -> AttackSpec:
    """``{"counts": [a, b, c]}`` or ``{"paulis": ["X", "I", ...]}``."""
    if spec is None:
        return AttackSpec.identity(n_wires)
    try:
        if "paulis" in spec:
            attack = AttackSpec(tuple(spec["paulis"]))
        else:
            attack = AttackSpec.from_counts(n_wires, *spec["counts"])
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid attack: {exc}") from exc
    if attack.n_wires != n_wires:
        raise ConfigError(f"attack covers {attack.n_wires} wires, the pattern has {n_wires}")
    return attack


# ---------------------------------------------------------------- output


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".10g")
    return str(value)


def write_csv(path: Path, columns, rows) -> None:
    """Rows are dicts keyed by column (missing keys left blank) or plain sequences."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            values = [row.get(c) for c in columns] if isinstance(row, dict) else row
            writer.writerow([fmt(v) for v in values])


def summary_row(**fields) -> dict:
    unknown = set(fields) - set(SUMMARY_COLUMNS)
    if unknown:
        raise KeyError(f"unknown summary fields {sorted(unknown)}")
    return fields


def run_chunks(settings: Settings, name: str, worker: Callable, total: int, *args) -> list:
    """Split ``total`` trials into fixed chunks, each with its own sub-stream."""
    jobs = [
        (worker, settings.seed, name, i, min(CHUNK, total - start), args)
        for i, start in enumerate(range(0, total, CHUNK))
    ]
    if settings.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=settings.parallel) as pool:
            return list(pool.map(_call, jobs))
    return [_call(job) for job in jobs]


def _call(job):
    worker, seed, name, index, size, args = job
    return worker(stream(seed, name, index), size, *args)


# ---------------------------------------------------------------- delegate


def cmd_delegate(settings: Settings) -> int:
    source = circuit_from(settings)
    trials = settings.trials or 1
    observables = settings.get("observables")
    layout = settings.get("layout")
    loss = settings.get("loss_prob", 0.0, float)
    mode = settings.get("mode", "shots")
    rng = stream(settings.seed, "delegate")
    try:
        pattern, secrets = patterns.compile(source, rng, batch=trials, observables=observables, layout=layout)
        attack = attack_from(settings.get("attack"), pattern.n_wires)
        server = PauliAttackServer(attack) if attack.weight else HonestServer()
        channel = adqc.LossyChannel(loss, rng)
    except (CompileError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    transcript = Transcript(seed=settings.seed)
    result = run_delegation(pattern, secrets, server, channel, rng, mode=mode, transcript=transcript)

    settings.out.mkdir(parents=True, exist_ok=True)
    transcript.write(settings.out / "transcript.log")
    (settings.out / "pattern.json").write_text(pattern.public.to_json() + "\n")
    accepted_rate = float(result.accepted.mean())
    write_csv(
        settings.out / "summary.csv",
        SUMMARY_COLUMNS,
        [
            summary_row(
                experiment="delegate",
                N=pattern.n_wires,
                M=pattern.depth,
                attack_weight=attack.weight,
                trials=trials,
                escape_rate=accepted_rate if attack.weight else None,
                bound=species_bound(attack) if attack.weight else None,
                resends_mean=float(result.resends.mean()),
                accepted_rate=accepted_rate,
                seed=settings.seed,
            )
        ],
    )
    estimate = result.estimate()
    write_csv(
        settings.out / "plotdata.csv",
        PLOT_COLUMNS,
        [("expectation", q, estimate[q], _stderr(estimate[q], int(result.accepted.sum()), mode)) for q in range(source.w)],
    )
    for b in range(min(trials, 10)):
        outputs = result.corrected_outputs[b] if result.corrected_outputs is not None else result.expectations[b]
        status = "accepted" if result.accepted[b] else f"rejected ({result.trap_failures[b]} trap failures)"
        print(f"run {b}: {status}; outputs {np.round(outputs, 12).tolist()}")
    print(f"accepted {int(result.accepted.sum())}/{trials}; <Z> estimate {np.round(estimate, 6).tolist()}")
    return EXIT_OK if result.accepted.all() else EXIT_ABORT


def _stderr(mean: float, n: int, mode: str) -> float:
    if mode == "exact" or n == 0:
        return 0.0
    return float(np.sqrt(max(1.0 - mean**2, 0.0) / n))


# ---------------------------------------------------------------- verify


def _verify_worker(rng, size, n_wires, paulis, model):
    res = detection_experiment(n_wires, AttackSpec(paulis), size, rng, model=model)
    return res.escapes


def cmd_verify(settings: Settings) -> int:
    n_wires = settings.get("n_wires", 6, int)
    species = str(settings.get("species", "X")).upper()
    weights = settings.get("weights", [0, 1, 2, 3])
    model = settings.get("model", "ideal")
    trials = settings.trials or 10_000
    if species not in ("X", "Z", "XZ"):
        raise ConfigError("species must be X, Z or XZ")
    if model not in ("ideal", "protocol"):
        raise ConfigError("model must be 'ideal' or 'protocol'")
    try:
        patterns_w = n_wires // 3
        if n_wires < 4 or patterns.wire_count(patterns_w) != n_wires:
            raise ValueError(f"no compute width yields {n_wires} wires")
        attacks = [
            AttackSpec.from_counts(n_wires, **{{"X": "a", "Z": "b", "XZ": "c"}[species]: int(m)}) for m in weights
        ]
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    depth = None
    if model == "protocol":
        source = SourceCircuit(patterns_w, tuple(patterns.Gate("h", (q,)) for q in range(patterns_w)))
        depth = patterns.compile(source, np.random.default_rng(0))[0].depth

    rows, plot = [], []
    for attack in attacks:
        name = f"verify/{species}/{attack.weight}"
        escapes = sum(run_chunks(settings, name, _verify_worker, trials, n_wires, attack.paulis, model))
        rate = escapes / trials
        if model == "protocol":
            exact = escape_probability_enumerated(attack, paired=patterns_w == 2)
        else:
            exact = escape_probability_exact(n_wires, attack)
        sigma = float(np.sqrt(max(exact * (1 - exact), 0.0) / trials))
        bound = species_bound(attack)
        rows.append(
            summary_row(
                experiment=f"verify_{model}",
                N=n_wires,
                M=depth,
                attack_weight=attack.weight,
                trials=trials,
                escape_rate=rate,
                bound=bound,
                resends_mean=0.0 if model == "protocol" else None,
                accepted_rate=rate,
                seed=settings.seed,
            )
        )
        plot += [
            ("escape_rate", attack.weight, rate, sigma),
            ("exact", attack.weight, exact, 0.0),
            ("bound", attack.weight, bound, 0.0),
        ]
        print(f"|a|={attack.weight}: escape {rate:.5f} (exact {exact:.5f}, 3 sigma {3 * sigma:.5f}) bound {bound:.4f}")
    write_csv(settings.out / "summary.csv", SUMMARY_COLUMNS, rows)
    write_csv(settings.out / "plotdata.csv", PLOT_COLUMNS, plot)
    return EXIT_OK


# ---------------------------------------------------------------- loss


def baseline_redelegation(rng, trials: int, loss_prob: float, n_gadgets: int) -> np.ndarray:
    """Without retransmission any lost ancilla restarts the whole circuit."""
    lost = rng.random((trials, n_gadgets)) < loss_prob
    return lost.any(axis=1)


def loss_workload(rng, trials: int, loss_prob: float, n_gadgets: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Drive one register wire through ``n_gadgets`` J(0) gadgets over a lossy
    channel, retransmitting Bell halves until delivered.

    Returns resends per trial, re-delegations per trial (always zero: a loss
    only ever triggers a resend) and the smallest fidelity of the final state
    against the byproduct-corrected ideal.
    """
    channel = adqc.LossyChannel(loss_prob, rng)
    reg = qsim.Register(trials)
    reg.add_qubit("R", qsim.KET0)
    frame = adqc.PauliFrame.zeros(1, trials)
    resends = np.zeros(trials, dtype=np.int64)
    for _ in range(n_gadgets):
        resends += adqc.transmit(channel, trials) - 1
        gs = adqc.GadgetSecrets.draw(rng, trials)
        s0, a1 = adqc.client_bell_measure(adqc.bell_pair(trials), gs.k, rng)
        adqc.attach_ancillas(reg, a1)
        phi = adqc.adaptive_angle(frame, 0, 0.0)
        _, _, s3 = adqc.run_j_gadget(reg, "R", lambda s1, s2: adqc.encrypted_angle(phi, s1, gs.k, s0, gs.r), rng)
        frame = adqc.frame_after_j(frame, 0, s3 ^ gs.r.astype(np.uint8))
    ideal = qsim.KET0 if n_gadgets % 2 == 0 else qsim.KET_PLUS
    fix = np.where(frame.x[:, 0, None, None], qsim.X, qsim.I2) @ np.where(frame.z[:, 0, None, None], qsim.Z, qsim.I2)
    out = qsim.apply_1q(reg.state(["R"]), np.conj(np.transpose(fix, (0, 2, 1))), 0, check=False)
    fid = qsim.fidelity(out, qsim.Statevector(np.tile(ideal, (trials, 1))))
    return resends, np.zeros(trials, dtype=np.int64), float(fid.min())


def _loss_worker(rng, size, loss_prob, n_gadgets):
    base = baseline_redelegation(rng, size, loss_prob, n_gadgets)
    resends, redo, fid = loss_workload(rng, size, loss_prob, n_gadgets)
    return int(base.sum()), resends.astype(float).tolist(), int(redo.sum()), fid


def cmd_loss(settings: Settings) -> int:
    probs = settings.get("loss_probs", [0.0, 0.01, 0.05])
    n_gadgets = settings.get("n_gadgets", 108, int)
    trials = settings.trials or 10_000
    try:
        probs = [float(p) for p in probs]
    except (TypeError, ValueError) as exc:
        raise ConfigError("loss_probs must be numbers") from exc
    if any(not 0.0 <= p < 1.0 for p in probs) or n_gadgets < 1:
        raise ConfigError("loss probabilities lie in [0, 1) and n_gadgets >= 1")
    table, summary, plot = [], [], []
    for p in probs:
        parts = run_chunks(settings, f"loss/{p!r}", _loss_worker, trials, p, n_gadgets)
        base = sum(part[0] for part in parts)
        resends = np.concatenate([np.array(part[1]) for part in parts])
        redo = sum(part[2] for part in parts)
        fid = min(part[3] for part in parts)
        analytic = adqc.redelegation_probability(p, n_gadgets)
        base_rate = base / trials
        base_sigma = float(np.sqrt(analytic * (1 - analytic) / trials))
        res_mean = float(resends.mean())
        res_analytic = adqc.expected_resends(p, n_gadgets)
        res_sigma = float(np.sqrt(n_gadgets * p / (1 - p) ** 2 / trials))
        table.append(
            (p, n_gadgets, trials, analytic, base_rate, base_sigma, res_analytic, res_mean, res_sigma, redo, fid, settings.seed)
        )
        summary.append(
            summary_row(
                experiment="loss",
                N=1,
                M=n_gadgets,
                attack_weight=0,
                trials=trials,
                resends_mean=res_mean,
                accepted_rate=1.0 - redo / trials,
                seed=settings.seed,
            )
        )
        plot += [
            ("baseline_redelegation", p, base_rate, base_sigma),
            ("baseline_analytic", p, analytic, 0.0),
            ("resends_mean", p, res_mean, res_sigma),
            ("resends_analytic", p, res_analytic, 0.0),
        ]
        print(
            f"p={p}: baseline restart {analytic:.4f} analytic, {base_rate:.4f} MC; "
            f"resends {res_mean:.4f} (expected {res_analytic:.4f}); re-delegations {redo}"
        )
    write_csv(
        settings.out / "loss_table.csv",
        (
            "loss_prob",
            "n_gadgets",
            "trials",
            "baseline_analytic",
            "baseline_mc",
            "baseline_sigma",
            "resends_analytic",
            "resends_mc",
            "resends_sigma",
            "redelegations",
            "min_fidelity",
            "seed",
        ),
        table,
    )
    write_csv(settings.out / "summary.csv", SUMMARY_COLUMNS, summary)
    write_csv(settings.out / "plotdata.csv", PLOT_COLUMNS, plot)
    return EXIT_OK


# ---------------------------------------------------------------- blindness


def cmd_blindness(settings: Settings) -> int:
    report = blindness_audit()
    metrics = [
        ("bell_half_trace_distance", report.bell_trace_distance),
        ("phi_prime_uniform", int(report.phi_uniform)),
        ("phi_prime_shift_consistent", int(report.phi_shift_consistent)),
        ("conditional_output_trace_distance", report.output_trace_distance),
        ("view_distribution_distance", report.view_distribution_distance),
        ("server_views", report.n_views),
    ]
    write_csv(settings.out / "blindness.csv", ("metric", "value"), metrics)
    plot = [
        (f"phi_prime_hist_phi{u}", v, count / 16.0, 0.0)
        for u, hist in report.phi_histograms.items()
        for v, count in enumerate(hist)
    ]
    write_csv(settings.out / "plotdata.csv", PLOT_COLUMNS, plot)
    write_csv(
        settings.out / "summary.csv",
        SUMMARY_COLUMNS,
        [summary_row(experiment="blindness", N=1, M=2, trials=report.n_views, seed=settings.seed)],
    )
    for name, value in metrics:
        print(f"{name}: {fmt(value)}")
    return EXIT_OK


# ---------------------------------------------------------------- train


def cmd_train(settings: Settings) -> int:
    source = circuit_from(settings) if "circuit" in settings.values else vqa.toy_circuit()
    n_params = len(source.parameter_indices)
    theta = settings.get("theta", [0.1] * n_params)
    cost_spec = settings.get("cost", {"kind": "identity"})
    try:
        cost = vqa.Cost(cost_spec.get("kind", "identity"), float(cost_spec.get("target", 0.0)))
        config = vqa.VqaConfig(
            theta=tuple(theta),
            eta=settings.get("eta", 0.4, float),
            iterations=settings.get("iterations", 100, int),
            repetitions=settings.trials or settings.get("repetitions", 1, int),
            observables=tuple(settings.get("observables") or ("Z",) * source.w),
            weights=settings.get("weights"),
            cost=cost,
            optimizer=settings.get("optimizer", "gd"),
            adam=vqa.AdamHyper(**settings.get("adam", {})),
        )
    except (AttributeError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training config: {exc}") from exc
    if len(config.theta) < n_params:
        raise ConfigError(f"circuit uses {n_params} parameters, theta has {len(config.theta)}")
    mode = settings.get("mode", "exact")
    runner_kind = settings.get("runner", "blind")
    if runner_kind == "blind":
        runner = vqa.BlindRunner(mode=mode, loss_prob=settings.get("loss_prob", 0.0, float))
    elif runner_kind == "direct":
        runner = vqa.DirectRunner(mode=mode)
    else:
        raise ConfigError("runner must be 'blind' or 'direct'")
    records = vqa.train(config, source, runner, stream(settings.seed, "train"))

    columns = ("iteration", "cost", "expectation", "grad_norm", "aborted") + tuple(
        f"theta_{j}" for j in range(config.n_params)
    )
    rows = [
        (r.iteration, r.cost, r.expectation, float(np.linalg.norm(r.gradient)), r.aborted, *r.theta) for r in records
    ]
    write_csv(settings.out / "train_log.csv", columns, rows)
    write_csv(settings.out / "plotdata.csv", PLOT_COLUMNS, [("cost", r.iteration, r.cost, 0.0) for r in records])
    runs = config.iterations * config.n_circuits * (1 if mode == "exact" else config.repetitions)
    aborted = sum(r.aborted for r in records)
    write_csv(
        settings.out / "summary.csv",
        SUMMARY_COLUMNS,
        [
            summary_row(
                experiment=f"train_{runner_kind}",
                N=patterns.wire_count(source.w),
                trials=runs,
                resends_mean=(runner.resends / runs) if runner_kind == "blind" and runs else None,
                accepted_rate=(1.0 - aborted / runs) if runs else None,
                seed=settings.seed,
            )
        ],
    )
    if records:
        last = records[-1]
        print(f"iterations {len(records)}; final cost {last.cost:.6f}; theta {np.round(last.theta, 6).tolist()}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "delegate": cmd_delegate,
    "verify": cmd_verify,
    "loss": cmd_loss,
    "blindness": cmd_blindness,
    "train": cmd_train,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindvqa", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="root seed (non-negative)")
    common.add_argument("--trials", type=int, help="number of trials / repetitions")
    common.add_argument("--out", help="output directory")
    common.add_argument("--parallel", type=int, help="worker processes")
    sub = parser.add_subparsers(dest="command", required=True)
    delegate = sub.add_parser("delegate", parents=[common], help="run delegations and write a transcript")
    delegate.add_argument("--malicious", action="store_true", help="server applies X to wire 0")
    delegate.add_argument("--loss-prob", dest="loss_prob", type=float)
    delegate.add_argument("--mode", choices=("shots", "exact"))
    verify = sub.add_parser("verify", parents=[common], help="escape rate versus attack weight")
    verify.add_argument("--model", choices=("ideal", "protocol"))
    loss = sub.add_parser("loss", parents=[common], help="retransmission versus re-delegation")
    loss.add_argument("--loss-prob", dest="loss_prob", type=float)
    sub.add_parser("blindness", parents=[common], help="exact blindness audit")
    train = sub.add_parser("train", parents=[common], help="parameter-shift training through the protocol")
    train.add_argument("--mode", choices=("shots", "exact"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = resolve(args)
        if args.command == "loss" and getattr(args, "loss_prob", None) is not None:
            settings.values["loss_probs"] = [args.loss_prob]
        return COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except adqc.ChannelFault as exc:
        print(f"channel fault: {exc}", file=sys.stderr)
        return EXIT_CHANNEL


if __name__ == "__main__":
    sys.exit(main())
