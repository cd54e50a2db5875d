"""``polforge`` console entry point."""
import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from controller.attacks import (
    blindfold_topq_attack,
    infinitesimal_attack,
    interp_perturb_attack,
    minimal_checkpoints,
    rna_attack,
)
from controller.bounds import alpha_for_angle, mc_validate_angle, mc_validate_tail, query_lower_bound, stability_zeta
from controller.commitment import CommitmentLedger
from controller.harness import run, write_csv
from controller.proofchain import DatasetProvider, build_proof, chain_digest, deserialize, serialize
from controller.tinytrain import gen_dataset, init_model, train
from controller.verifier import verify
from errors import ConfigurationError, LedgerError, PolForgeError
from model.bounds import CostDistributionKind, CostDistributionSpec
from model.experiment import ExperimentId, ExperimentSpec, PolForgeConfig
from model.proof import Proof
from model.tinytrain import Dataset
from model.verification import Overall
from settings import SETTINGS, configure_logging, load_config, load_policy

logger = logging.getLogger("polforge")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def _config(path: Optional[str]) -> PolForgeConfig:
    return load_config(path) if path else PolForgeConfig()


def _read_proof(path: str) -> Proof:
    try:
        return deserialize(Path(path).read_bytes())
    except OSError as e:
        raise ConfigurationError(f"cannot read proof {path}: {e}", path=path)


def cmd_prove(args: argparse.Namespace) -> int:
    config = _config(args.config)
    dataset = gen_dataset(config.dataset.seed, config.dataset)
    training = train(config.train, dataset)
    proof = build_proof(training, dataset, config.train.k)
    Path(args.out).write_bytes(serialize(proof))
    logger.info(f"Wrote proof {chain_digest(proof).hex()} ({proof.T} steps) to {args.out}")
    return EXIT_OK


def cmd_commit(args: argparse.Namespace) -> int:
    proof = _read_proof(args.proof)
    ledger = CommitmentLedger(Path(args.ledger or SETTINGS.ledger_path))
    if ledger.detect_replay(proof):
        raise LedgerError(f"proof {chain_digest(proof).hex()} is already committed", replay=True)
    entry = ledger.commit(proof, label=args.label)
    print(entry.to_line())
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    config = _config(args.config)
    policy = load_policy(args.policy) if args.policy else config.policy
    if args.q is not None:
        policy = policy.model_copy(update={"q": args.q})
    proof = _read_proof(args.proof)
    if args.rows:
        stored = np.load(args.rows)
        dataset = Dataset(features=stored["features"], labels=stored["labels"], n_classes=int(stored["n_classes"]))
    else:
        dataset = gen_dataset(config.dataset.seed, config.dataset)
    report = verify(proof, policy, DatasetProvider(dataset), rd=args.rd, workers=args.workers)
    print(report.summary())
    if args.csv:
        write_csv(Path(args.csv), ["step", "dist", "threshold", "decision", "norm_g", "norm_gp"], report.csv_rows())
    return EXIT_OK if report.overall == Overall.VALID else EXIT_FAILED


def cmd_attack(args: argparse.Namespace) -> int:
    config = _config(args.config)
    dataset = gen_dataset(config.dataset.seed, config.dataset)
    victim = _read_proof(args.victim)
    target = victim.final
    rng = np.random.default_rng(args.seed)
    start = init_model(target.arch, int(rng.integers(2 ** 31)), config.train.init_scale)
    params = config.attack
    delta = args.delta or params.delta or 0.008
    k = args.k or victim.k

    if args.kind == "inf":
        T = args.T or minimal_checkpoints(target, start, delta, params.margin) * k
        result = infinitesimal_attack(target, start, T, k, delta, dataset, rng, params.margin)
    elif args.kind == "blindfold":
        result = blindfold_topq_attack(target, start, params.q, args.k or params.blindfold_k, params.s,
                                       params.lr_large, dataset, rng, params.blindfold_epochs)
    elif args.kind == "interp":
        result = interp_perturb_attack(target, start, k, delta, params.n_iter, dataset, rng,
                                       params.n_checkpoints, config.train.lr, params.data_lr)
        rows_path = Path(args.out).with_suffix(".rows.npz")
        np.savez(rows_path, features=result.dataset.features, labels=result.dataset.labels,
                 n_classes=result.dataset.n_classes)
        logger.info(f"Synthetic rows written to {rows_path}")
    else:
        result = rna_attack(target, start, params.rounds, params.m, dataset, config.train.lr, rng,
                            fp_budget=args.budget, include_base=params.include_base)
        logger.info(f"RNA distance curve: {result.distance_curve[0]:.4g} -> {result.final_distance:.4g}")

    Path(args.out).write_bytes(serialize(result.proof))
    print(f"{args.kind}: {result.proof.T} steps, {result.ledger.fp_units:.0f} FP, written to {args.out}")
    return EXIT_OK


def cmd_bounds(args: argparse.Namespace) -> int:
    if args.bound == "stability":
        bound = stability_zeta(args.var_p, args.mean, args.c, args.var_f)
        print(f"zeta={bound.zeta:.10g} a={bound.a:.10g}" + (" (unbounded)" if bound.unbounded else ""))
    elif args.bound == "queries":
        bound = query_lower_bound(args.var, args.mean, args.c)
        if bound.vacuous:
            print(f"P={bound.p:.10g}: bound vacuous")
        else:
            print(f"P={bound.p:.10g} N={bound.n:.10g}" + (" (unbounded)" if bound.unbounded else ""))
    elif args.bound == "tail":
        kind = CostDistributionKind(args.kind)
        params = {
            CostDistributionKind.LOGNORMAL: {"mu": args.mu, "sigma": args.sigma},
            CostDistributionKind.GAMMA: {"shape": args.shape, "scale": args.scale},
            CostDistributionKind.POINT_MASS: {"value": args.value},
            CostDistributionKind.EMPIRICAL: {},
        }[kind]
        dist = CostDistributionSpec(kind=kind, params=params, samples=args.samples)
        result = mc_validate_tail(dist, args.c, args.trials, np.random.default_rng(args.seed))
        rows = [block.model_dump() for block in result.blocks]
        if args.out:
            write_csv(Path(args.out), ["trial_block", "empirical_p", "bound_p"], rows)
        print(f"empirical_P={result.empirical_p:.6g} bound_P={result.bound_p:.6g} holds={result.holds}")
        return EXIT_OK if result.holds else EXIT_FAILED
    else:
        theta = args.theta
        result = mc_validate_angle(theta, args.trials, np.random.default_rng(args.seed))
        print(f"alpha={alpha_for_angle(theta):.10g} accepted={result.accepted} violations={result.violations} "
              f"max_angle={result.max_angle:.6g}")
        return EXIT_OK if result.violations == 0 else EXIT_FAILED
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = _config(args.config)
    fields = config.model_dump()
    fields.update({"id": ExperimentId(args.exp), "out_dir": Path(args.out), "seed": args.seed})
    if args.repeats is not None:
        fields["repeats"] = args.repeats
    outcome = run(ExperimentSpec.model_validate(fields), workers=args.workers)
    for name, held in outcome.invariants.items():
        print(f"{'PASS' if held else 'FAIL'} {name}")
    return EXIT_OK if outcome.passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polforge", description="Proof-of-learning toolkit")
    parser.add_argument("--log-level", default=None, help="Overrides POLFORGE_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prove", help="Train honestly and write the proof")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("commit", help="Timestamp a proof digest in the ledger file")
    p.add_argument("--proof", required=True)
    p.add_argument("--ledger")
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_commit)

    p = sub.add_parser("verify", help="Replay and judge a proof")
    p.add_argument("--proof", required=True)
    p.add_argument("--policy")
    p.add_argument("--config", help="Dataset the proof's rows are served from")
    p.add_argument("--rows", help="Synthetic rows (.npz) written by an interp attack")
    p.add_argument("--rd", type=float)
    p.add_argument("--q", type=int)
    p.add_argument("--csv")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attack", help="Forge a proof for a victim's final weights")
    p.add_argument("--kind", choices=["inf", "blindfold", "interp", "rna"], required=True)
    p.add_argument("--victim", required=True, help="Victim proof file")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--delta", type=float)
    p.add_argument("--T", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--budget", type=float, help="FP budget for rna")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bounds", help="Cheap-spoofing bounds and their Monte Carlo checks")
    p.add_argument("--lemma", "--bound", dest="bound", choices=["stability", "queries", "tail", "angle"],
                   required=True)
    p.add_argument("--var-p", type=float, default=0.0)
    p.add_argument("--var-f", type=float, default=0.0)
    p.add_argument("--var", type=float, default=0.0)
    p.add_argument("--mean", type=float, default=1.0)
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--kind", choices=[k.value for k in CostDistributionKind], default="lognormal")
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--shape", type=float, default=2.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--value", type=float, default=1.0)
    p.add_argument("--samples", type=float, nargs="*")
    p.add_argument("--theta", type=float, default=math.pi / 6)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("run", help="Run an experiment")
    p.add_argument("--exp", choices=[e.value for e in ExperimentId], required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except PolForgeError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
