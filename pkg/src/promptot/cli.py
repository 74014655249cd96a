"""Command-line entry point: ``promptot <subcommand> ...``.

Exit status: 0 on success, 1 on usage or input errors, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .alignment import AlignmentConfig, prompt_cosines, solve_plans
from .errors import NumericalError, PromptOTError
from .ot import TransportProblem, dykstra_uot, sinkhorn_ot
from .refinement import denoise, refinement_metrics
from .synth import SynthConfig, gen_dataset, make_noisy_dataset
from .trainer import TrainConfig, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _add_alignment_flags(p):
    p.add_argument("--epsilon", type=float, help="entropic weight for the UOT solver (default 0.1)")
    p.add_argument("--theta", type=float, help="transported mass for partial matching (default 0.9)")
    p.add_argument("--max-iter", type=int, help="UOT iteration cap (default 100)")
    p.add_argument("--stop-delta", type=float, help="UOT stopping threshold (default 1e-3)")


def _alignment_from(args, base: AlignmentConfig = AlignmentConfig()) -> AlignmentConfig:
    updates = {
        k: v for k, v in (("epsilon", args.epsilon), ("theta", args.theta),
                          ("max_iter", args.max_iter), ("stop_delta", args.stop_delta))
        if v is not None
    }
    return dataclasses.replace(base, **updates)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="promptot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic embedding dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--patches", type=int, default=16)
    p.add_argument("--separation", type=float, default=20.0)
    p.add_argument("--background-fraction", type=float, default=0.25)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--noise-kind", choices=["symmetric", "asymmetric"], default="symmetric")
    p.add_argument("--split", choices=["train", "test"], default="train",
                   help="test splits share prototypes with train but carry clean labels")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a prompt bank")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path, help="JSON file with TrainConfig fields")
    p.add_argument("--epochs", type=int)
    p.add_argument("--sup-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--lambda-i", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--refine-every", choices=["epoch", "batch"])
    p.add_argument("--seed", type=int)
    _add_alignment_flags(p)

    p = sub.add_parser("eval", help="test accuracy of a trained bank")
    p.add_argument("--bank", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--report", type=Path)
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; evaluation is deterministic")
    _add_alignment_flags(p)

    p = sub.add_parser("refine", help="one selective refinement round with a fixed bank")
    p.add_argument("--bank", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--no-gate", action="store_true", help="relabel every sample (full OT)")
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; refinement is deterministic")
    _add_alignment_flags(p)

    p = sub.add_parser("solve-ot", help="solve an entropic OT problem from a cost file")
    p.add_argument("--cost", required=True, type=Path, help="comma-separated cost matrix")
    p.add_argument("--mu", type=Path, help="row marginal, one comma-separated line")
    p.add_argument("--nu", type=Path, help="column marginal, one comma-separated line")
    p.add_argument("--mode", choices=["classical", "unbalanced"], default="classical")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--theta", type=float, default=0.9, help="column mass when --nu is omitted (unbalanced)")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--out", type=Path, help="write the plan here instead of stdout")
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; solving is deterministic")

    p = sub.add_parser("export-plan", help="UOT plan between one sample and one class's prompts")
    p.add_argument("--bank", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--sample", required=True, type=int)
    p.add_argument("--class", dest="class_index", required=True, type=int)
    p.add_argument("--side", choices=["clean", "noisy"], default="clean")
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; solving is deterministic")
    _add_alignment_flags(p)
    return parser


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_gen(args) -> int:
    cfg = SynthConfig(
        num_classes=args.classes, shots=args.shots, dim=args.dim, patches=args.patches,
        separation=args.separation, background_fraction=args.background_fraction,
        noise_rate=args.noise_rate, noise_kind=args.noise_kind, seed=args.seed,
    )
    ds = make_noisy_dataset(cfg) if args.split == "train" else gen_dataset(cfg, "test")
    io.write_dataset(ds, args.out, provenance=json.dumps(
        {"generator": "synthetic", "split": args.split, **dataclasses.asdict(cfg)}, sort_keys=True
    ))
    print(f"wrote {len(ds)} samples to {args.out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config is not None:
        try:
            base = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    align = AlignmentConfig(**base.pop("alignment", {}))
    flags = {
        "epochs": args.epochs, "sup_epochs": args.sup_epochs, "learning_rate": args.lr,
        "momentum": args.momentum, "weight_decay": args.weight_decay,
        "batch_size": args.batch_size, "views": args.views, "lambda_i": args.lambda_i,
        "q": args.q, "refine_every": args.refine_every, "seed": args.seed,
    }
    base.update({k: v for k, v in flags.items() if v is not None})
    try:
        return TrainConfig(alignment=_alignment_from(args, align), **base)
    except TypeError as exc:
        raise UsageError(f"bad training config: {exc}") from exc


def cmd_train(args) -> int:
    cfg = _train_config(args)
    ds = io.read_dataset(args.data)
    bank, history = train(ds, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_bank(bank, args.out / "bank.json")
    io.write_jsonl(history.records, args.out / "history.jsonl")
    io.write_record(dataclasses.asdict(cfg), args.out / "config.json")
    report = {}
    if history.records:
        report = history.records[-1].get("report", {})
    io.write_record(report, args.out / "report.json")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    bank = io.read_bank(args.bank)
    ds = io.read_dataset(args.data)
    acc = evaluate(bank, ds, _alignment_from(args))
    print(f"accuracy={acc!r}")
    if args.report is not None:
        io.write_record({"accuracy": acc, "num_samples": len(ds)}, args.report)
    return EXIT_OK


def cmd_refine(args) -> int:
    bank = io.read_bank(args.bank)
    ds = io.read_dataset(args.data)
    part, pseudo, denoised = denoise(ds, bank, _alignment_from(args), gated=not args.no_gate)
    report = refinement_metrics(ds.labels, denoised, ds.truth).to_record()
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_record({
        "labels": denoised.labels.tolist(),
        "refined_mask": denoised.refined_mask.tolist(),
        "pseudo_labels": pseudo.tolist(),
        "clean_indices": part.clean_indices.tolist(),
        "noisy_indices": part.noisy_indices.tolist(),
    }, args.out / "denoised.json")
    io.write_record(report, args.out / "report.json")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_solve_ot(args) -> int:
    cost = io.read_matrix_text(args.cost)
    m, n = cost.shape
    mu = io.read_matrix_text(args.mu).ravel() if args.mu else np.full(m, 1.0 / m)
    if args.nu:
        nu = io.read_matrix_text(args.nu).ravel()
    elif args.mode == "classical":
        nu = np.full(n, 1.0 / n)
    else:
        nu = np.full(n, args.theta / n)
    problem = TransportProblem(cost, mu, nu, args.epsilon)
    if args.mode == "classical":
        result = sinkhorn_ot(problem, args.max_iter, args.tol)
    else:
        result = dykstra_uot(problem, args.max_iter, args.tol)
    _emit(io.format_matrix_text(result.plan, {
        "objective": repr(result.objective),
        "iterations": result.iterations,
        "converged": str(result.converged).lower(),
    }), args.out)
    return EXIT_OK


def cmd_export_plan(args) -> int:
    bank = io.read_bank(args.bank)
    ds = io.read_dataset(args.data)
    if not 0 <= args.sample < len(ds):
        raise UsageError(f"--sample must lie in [0, {len(ds)})")
    if not 0 <= args.class_index < bank.num_classes:
        raise UsageError(f"--class must lie in [0, {bank.num_classes})")
    prompts = (bank.clean if args.side == "clean" else bank.noisy)[args.class_index:args.class_index + 1]
    cos = prompt_cosines(ds.local_features[args.sample:args.sample + 1], prompts)
    plans, conv = solve_plans(cos, _alignment_from(args))
    plan = plans[0, 0]
    _emit(io.format_matrix_text(plan, {
        "sample": args.sample,
        "class": args.class_index,
        "side": args.side,
        "distance": repr(float(np.sum((1.0 - cos[0, 0]) * plan))),
        "converged": str(bool(conv[0, 0])).lower(),
    }), args.out)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "refine": cmd_refine,
    "solve-ot": cmd_solve_ot,
    "export-plan": cmd_export_plan,
}


def cli_main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, PromptOTError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
