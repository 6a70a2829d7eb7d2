"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 infeasible scenario, 4 I/O error.
All randomness derives from --seed, so repeated runs write identical files.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as cfg
from .codec import (
    CompressionConfig,
    compress_model,
    compressed_bits_bound,
    decode_layer,
    from_bytes,
    quantize,
    ratio_to_pruning_rate,
    reconstruct_sparse,
    sparsify,
)
from .fedsim import RoundLedger, SimulationError, energy_to_target, run_modeled
from .gradients import LayerKind, LayerShape, SyntheticGradientSpec, layer_rng, synthetic_model
from .models import FitError, fit_kappa
from .optimizer import STRATEGIES, Boundary, strategy_fedgreen
from .toy import ToyTrainSpec, TrainingDiverged, run_toy_training

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

ROUND_COLUMNS = (
    "round", "device_id", "alpha", "f_hz", "comm_energy_j", "comp_energy_j", "latency_s",
    "feasible", "total_energy_j", "cumulative_energy_j", "contribution", "goal",
)

CODEC_SHAPES = (
    LayerShape.conv(0, 16, 3, 3),
    LayerShape.bias(1, 16),
    LayerShape.conv(2, 32, 16, 3),
    LayerShape.bias(3, 32),
    LayerShape.fc(4, 10, 512),
    LayerShape.bias(5, 10),
)


class InfeasibleScenario(RuntimeError):
    pass


def fmt(x) -> str:
    """Fixed 9-significant-digit rendering; booleans as 0/1, missing values empty."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.9g}"


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def emit_round_csv(ledgers: Sequence[RoundLedger], path) -> None:
    """One row per (round, device) plus an aggregate row per round with device_id -1."""
    rows = []
    for led in ledgers:
        for d in led.devices:
            rows.append((
                led.round_index, d.device_id, d.alpha, d.f, d.comm_energy, d.comp_energy, d.latency,
                d.feasible, d.energy, led.cumulative_energy, d.contribution, d.objective_share,
            ))
        rows.append((
            led.round_index, -1, None, None,
            math.fsum(d.comm_energy for d in led.devices),
            math.fsum(d.comp_energy for d in led.devices),
            max(d.latency for d in led.devices if d.participating),
            all(d.feasible for d in led.devices if d.participating),
            led.total_energy, led.cumulative_energy, led.contribution, led.goal,
        ))
    _write_rows(Path(path), ROUND_COLUMNS, rows)


def write_manifest(path: Path, entries: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for k in sorted(entries):
        v = entries[k]
        lines.append(f"{k} = {repr(v) if isinstance(v, float) else v}")
    path.write_text("\n".join(lines) + "\n")


def _manifest(args, values: dict, **extra) -> dict:
    out = {f"run.{k}": v for k, v in extra.items()}
    out["run.command"] = args.command
    out["run.seed"] = _seed(args, values)
    out["run.scenario"] = args.scenario if args.scenario else "(defaults)"
    out.update(values)
    return out


def _seed(args, values) -> int:
    return values["scenario.seed"] if args.seed is None else args.seed


# --- commands -------------------------------------------------------------

def cmd_solve(args, values) -> int:
    scenario = cfg.build_scenario(values, _seed(args, values))
    plans = strategy_fedgreen(scenario.devices, scenario.config, scenario.accuracy_model)
    out = Path(args.out)
    _write_rows(out / "plans.csv", ("device_id", "alpha", "f_hz", "beta", "objective_share", "feasible", "boundary"), [
        (p.device_id, p.alpha, p.f, p.beta, p.objective_share, p.feasible, Boundary(p.boundary).value) for p in plans
    ])
    write_manifest(out / "manifest.txt", _manifest(args, values))
    if not any(p.feasible for p in plans):
        raise InfeasibleScenario("no device can meet the deadline")
    return EXIT_OK


def cmd_simulate(args, values) -> int:
    scenario = cfg.build_scenario(values, _seed(args, values))
    ledgers = run_modeled(scenario, args.strategy, args.rounds)
    out = Path(args.out)
    emit_round_csv(ledgers, out / "rounds.csv")
    write_manifest(out / "manifest.txt", _manifest(args, values, strategy=args.strategy, rounds=args.rounds))
    return EXIT_OK


def _compare_seed(job):
    values, seed, strategies, rounds, target = job
    scenario = cfg.build_scenario(values, seed)
    runs = {s: run_modeled(scenario, s, rounds) for s in strategies}
    return seed, runs, target


def compare_rows(seed: int, runs: dict[str, list[RoundLedger]], target: float | None) -> list[tuple]:
    """Summary rows for one seed; the best flag marks the highest goal, fedgreen winning ties."""
    stats = {}
    for name, ledgers in runs.items():
        stats[name] = (
            math.fsum(l.goal for l in ledgers) / len(ledgers),
            ledgers[-1].cumulative_energy,
            math.fsum(l.contribution for l in ledgers) / len(ledgers),
        )
    if target is None:
        ref = runs.get("fedgreen") or next(iter(runs.values()))
        target = 0.95 * math.fsum(l.contribution for l in ref) / len(ref)
    order = sorted(stats, key=lambda s: (-stats[s][0], s != "fedgreen", s))
    best = order[0]
    base_energy = stats["fedgreen"][1] if "fedgreen" in stats else None
    rows = []
    for name, ledgers in runs.items():
        g, e, c = stats[name]
        ratio = e / base_energy if base_energy else None
        rows.append((seed, name, g, e, c, target, energy_to_target(ledgers, target), ratio, name == best))
    return rows


SUMMARY_COLUMNS = (
    "seed", "strategy", "goal", "total_energy_j", "contribution", "target_contribution",
    "energy_to_target_j", "energy_ratio_vs_fedgreen", "best",
)


def cmd_compare(args, values) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise cfg.ConfigError("--strategies", f"unknown strategy {s!r}")
    if not strategies:
        raise cfg.ConfigError("--strategies", "need at least one strategy")
    if args.num_seeds < 1:
        raise cfg.ConfigError("--num-seeds", "must be >= 1")
    base = _seed(args, values)
    jobs = [(values, base + k, strategies, args.rounds, args.target_contribution) for k in range(args.num_seeds)]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_compare_seed, jobs))
    else:
        results = [_compare_seed(j) for j in jobs]
    rows = [r for seed, runs, target in results for r in compare_rows(seed, runs, target)]
    out = Path(args.out)
    _write_rows(out / "summary.csv", SUMMARY_COLUMNS, rows)
    write_manifest(out / "manifest.txt", _manifest(
        args, values, strategies=",".join(strategies), rounds=args.rounds, num_seeds=args.num_seeds,
        target_contribution=args.target_contribution if args.target_contribution is not None else "0.95 * fedgreen",
    ))
    return EXIT_OK


def cmd_toy_train(args, values) -> int:
    seed = _seed(args, values)
    scenario = cfg.build_scenario(values, seed)
    fixed = values["toy.fixed_alpha"] or None
    spec = ToyTrainSpec(
        seed=seed, rounds=args.rounds, strategy=args.strategy,
        samples_per_device=values["toy.samples_per_device"], learning_rate=values["toy.learning_rate"],
        fixed_alpha=fixed, compression=cfg.compression_config(values),
    )
    result = run_toy_training(scenario, spec)
    out = Path(args.out)
    emit_round_csv(result.ledgers, out / "rounds.csv")
    _write_rows(out / "toy.csv", ("round", "train_loss", "test_accuracy"), [
        (t, loss, acc) for t, (loss, acc) in enumerate(zip(result.train_loss, result.test_accuracy))
    ])
    write_manifest(out / "manifest.txt", _manifest(args, values, strategy=args.strategy, rounds=args.rounds))
    if result.diverged:
        raise TrainingDiverged("toy training diverged")
    return EXIT_OK


def _read_points(path: Path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    points = []
    for i, row in enumerate(rows):
        try:
            points.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            if i == 0:
                continue  # header
            raise cfg.ConfigError("--points", f"line {i + 1}: expected alpha,accuracy") from None
    return points


def cmd_fit_kappa(args, values) -> int:
    if args.points:
        points = _read_points(Path(args.points))
    else:
        # sample the configured curve, which the fit should reproduce
        model = cfg.build_scenario(values, 0).accuracy_model
        alphas = np.geomspace(1.0, 7.0, 12)
        points = [(float(a), float(model(a))) for a in alphas]
    try:
        fitted = fit_kappa(points, kappa2=values["accuracy.kappa2"])
    except FitError as exc:
        raise cfg.ConfigError("--points", str(exc)) from None
    out = Path(args.out)
    _write_rows(out / "kappa.csv", ("kappa1", "kappa2", "kappa3", "kappa4"), [
        (fitted.kappa1, fitted.kappa2, fitted.kappa3, fitted.kappa4)
    ])
    write_manifest(out / "manifest.txt", _manifest(args, values, points=args.points or "(configured curve)"))
    return EXIT_OK


def codec_roundtrip_rows(alphas: Sequence[float], config: CompressionConfig, seed: int) -> list[tuple]:
    """Compress a synthetic model at each ratio and check the decoded values bit for bit."""
    model = synthetic_model(CODEC_SHAPES, SyntheticGradientSpec(seed=seed))
    rows = []
    for alpha in alphas:
        blobs, achieved = compress_model(model, alpha, config, seed)
        rho = ratio_to_pruning_rate(model.shapes, alpha, config)
        for tensor, blob in zip(model.layers, blobs):
            shape = tensor.shape
            decoded = decode_layer(from_bytes(blob.to_bytes()))
            if shape.kind == LayerKind.BIAS:
                expected = tensor.values
                bound = 32 * shape.size
            else:
                sparse = sparsify(tensor, rho)
                q = quantize(sparse.kept_values, config.levels_for(shape), layer_rng(seed, shape.layer_id))
                expected = reconstruct_sparse(q.values(), sparse.mask, shape).values
                bound = compressed_bits_bound(shape, rho, config.levels_for(shape))
            exact = np.array_equal(decoded.tensor.values.view(np.uint32), np.asarray(expected, np.float32).view(np.uint32))
            rows.append((
                alpha, achieved, shape.layer_id, LayerKind(shape.kind).name.lower(), blob.kept_kernels,
                blob.mask_flag, blob.index_flag, blob.payload_bits, bound, exact,
            ))
    return rows


def cmd_codec_roundtrip(args, values) -> int:
    try:
        alphas = [float(a) for a in args.alpha.split(",") if a.strip()]
    except ValueError:
        raise cfg.ConfigError("--alpha", f"expected comma-separated numbers, got {args.alpha!r}") from None
    if not alphas or any(not a >= 1 for a in alphas):
        raise cfg.ConfigError("--alpha", "ratios must be >= 1")
    rows = codec_roundtrip_rows(alphas, cfg.compression_config(values), _seed(args, values))
    out = Path(args.out)
    _write_rows(out / "codec.csv", (
        "alpha", "achieved_alpha", "layer_id", "kind", "kept_kernels", "mask_flag", "index_flag",
        "payload_bits", "bound_bits", "exact",
    ), rows)
    write_manifest(out / "manifest.txt", _manifest(args, values, alpha=args.alpha))
    bad = [r for r in rows if not r[-1]]
    if bad:
        print(f"codec round-trip mismatch on {len(bad)} layer(s)", file=sys.stderr)
        return 1
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "toy-train": cmd_toy_train,
    "fit-kappa": cmd_fit_kappa,
    "codec-roundtrip": cmd_codec_roundtrip,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", metavar="PATH", help="INI or JSON scenario file")
    common.add_argument("--seed", type=int, help="overrides scenario.seed")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one scenario key, e.g. config.varpi=2e-4 (repeatable)")

    p = argparse.ArgumentParser(prog="fedcompress", description="Energy-aware compressed federated learning tools.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="per-device optimal ratio and frequency")

    s = sub.add_parser("simulate", parents=[common], help="modeled rounds for one strategy")
    s.add_argument("--strategy", default="fedgreen", choices=STRATEGIES + ("uncompressed",))
    s.add_argument("--rounds", type=int, default=10)

    c = sub.add_parser("compare", parents=[common], help="strategies side by side over several seeds")
    c.add_argument("--strategies", default=",".join(STRATEGIES))
    c.add_argument("--rounds", type=int, default=1)
    c.add_argument("--num-seeds", type=int, default=1)
    c.add_argument("--target-contribution", type=float, default=None,
                   help="contribution target; default 0.95 x fedgreen's per seed")
    c.add_argument("--parallel", type=int, default=1, help="worker processes across seeds")

    t = sub.add_parser("toy-train", parents=[common], help="train the toy network through the codec")
    t.add_argument("--strategy", default="fedgreen", choices=("fedgreen", "random", "uniform", "selection", "uncompressed"))
    t.add_argument("--rounds", type=int, default=30)

    f = sub.add_parser("fit-kappa", parents=[common], help="fit the accuracy curve to (alpha, accuracy) points")
    f.add_argument("--points", metavar="CSV", help="alpha,accuracy rows; default samples the configured curve")

    r = sub.add_parser("codec-roundtrip", parents=[common], help="encode/decode self-test on a synthetic model")
    r.add_argument("--alpha", default="1,4,16", help="comma-separated compression ratios")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "rounds", 1) < 1:
            raise cfg.ConfigError("--rounds", "must be >= 1")
        values = cfg.resolve(args.scenario, cfg.parse_overrides(args.overrides))
        if args.seed is not None and args.seed < 0:
            raise cfg.ConfigError("--seed", "must be >= 0")
        return COMMANDS[args.command](args, values)
    except cfg.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleScenario, SimulationError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # invariant violations raised while building the scenario
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
