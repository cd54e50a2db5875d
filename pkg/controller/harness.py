"""Experiment runner.

Every experiment derives all of its seeds from ``ExperimentSpec.seed``
through ``numpy.random.SeedSequence`` and writes its CSVs plus a
``summary.json`` holding the full spec, the derived seeds, ledgers,
verdicts and the outcome of each invariant check. Rerunning the spec stored
in a summary reproduces the experiment bit for bit.
"""
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from controller.attacks import (
    blindfold_topq_attack,
    infinitesimal_attack,
    interp_perturb_attack,
    minimal_checkpoints,
    rna_attack,
)
from controller.probes import data_ordering_probe, pretrain_adversary, synthesis_probe
from controller.proofchain import DatasetProvider, build_proof
from controller.stats import compare_costs, t_test_one_tailed
from controller.tinytrain import TrainingRun, gen_dataset, init_model, train
from controller.verifier import (
    HonestUpdateSampler,
    distance,
    estimate_min_threshold,
    estimate_min_thresholds,
    reference_distance,
    sample_distances,
    select_top_q,
    verify,
)
from errors import ConfigurationError, PolForgeError
from model.experiment import ExperimentId, ExperimentSpec
from model.ledger import CostLedger, OpKind
from model.proof import Proof
from model.tinytrain import Dataset, ModelState, TrainConfig
from model.verification import (
    AdaptiveThreshold,
    Metric,
    Overall,
    StaticThreshold,
    VerificationPolicy,
    VerificationReport,
)
from settings import SETTINGS

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 0.008


class HonestRun(BaseModel):
    """A victim's honest training and the proof it published."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: TrainConfig
    run: TrainingRun
    proof: Proof
    provider: DatasetProvider

    @property
    def final(self) -> ModelState:
        return self.run.final


class RepeatResult(BaseModel):
    seed: int
    rows: Dict[str, List[Dict[str, Any]]] = Field(default_factory=dict)
    summary: Dict[str, Any] = Field(default_factory=dict)
    invariants: Dict[str, bool] = Field(default_factory=dict)


class ExperimentOutcome(BaseModel):
    experiment: ExperimentId
    out_dir: Path
    artifacts: List[Path] = Field(default_factory=list)
    invariants: Dict[str, bool] = Field(default_factory=dict)
    summary: Dict[str, Any] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.invariants.values())


def derive_seeds(root: int, count: int) -> List[int]:
    """Independent per-repeat seeds spawned from one root seed."""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(root).spawn(count)]


def write_csv(path: Path, fieldnames: Sequence[str], rows: Sequence[Dict[str, Any]]) -> Path:
    """CSV with a header row, even when there are no rows."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    raise TypeError(f"cannot serialize {type(value).__name__}")


# Shared building blocks

def honest_run(spec: ExperimentSpec, dataset: Dataset, rng: np.random.Generator) -> HonestRun:
    seed, sampling_seed, noise_seed = (int(s) for s in rng.integers(2 ** 31, size=3))
    config = spec.train.model_copy(update={"seed": seed, "sampling_seed": sampling_seed, "noise_seed": noise_seed})
    run = train(config, dataset)
    proof = build_proof(run, dataset, config.k)
    return HonestRun(config=config, run=run, proof=proof, provider=DatasetProvider(dataset))


def adversary_start(honest: HonestRun, rng: np.random.Generator) -> ModelState:
    """A fresh initialization the spoofer claims to have trained from."""
    return init_model(honest.proof.arch, int(rng.integers(2 ** 31)), honest.config.init_scale)


def verifier_policy(spec: ExperimentSpec, threshold=None, q: Optional[int] = None) -> VerificationPolicy:
    """The configured policy, with verifier noise matched to the prover's when none is set."""
    update: Dict[str, Any] = {}
    if spec.policy.noise.is_silent:
        update["noise"] = spec.train.noise
    if threshold is not None:
        update["threshold"] = threshold
    if q is not None:
        update["q"] = q
    return spec.policy.model_copy(update=update)


def gradient_work(ledger: CostLedger) -> CostLedger:
    """The forward and backward passes of ``ledger``, without simulated reproduction noise."""
    return CostLedger(counters={
        OpKind.FORWARD: ledger.count(OpKind.FORWARD),
        OpKind.BACKWARD: ledger.count(OpKind.BACKWARD),
    })


def _fallback_delta(spec: ExperimentSpec) -> float:
    if spec.attack.delta is not None:
        return spec.attack.delta
    if isinstance(spec.policy.threshold, StaticThreshold):
        return spec.policy.threshold.delta
    return DEFAULT_DELTA


def calibrate_delta(
        spec: ExperimentSpec,
        honest: HonestRun,
        rng: np.random.Generator,
        tau: Optional[float] = None,
) -> float:
    """delta-hat(tau) from paired noisy replays of the honest proof; falls back without noise."""
    noise = verifier_policy(spec).noise
    if noise.is_silent:
        return _fallback_delta(spec)
    sampler = HonestUpdateSampler(honest.proof, honest.provider, noise)
    delta = estimate_min_threshold(sampler, spec.policy.metric, tau or spec.tau, spec.threshold_trials, rng)
    return delta if delta > 0 else _fallback_delta(spec)


def _report_rows(label: str, report: VerificationReport, extra: Dict[str, Any]) -> List[Dict[str, Any]]:
    nre = report.normalized_errors or [None] * len(report.verdicts)
    return [
        {**extra, "proof": label, "t": v.step, "eps_repr": v.distance, "delta": v.threshold_used, "nre": e}
        for v, e in zip(report.verdicts, nre)
    ]


def _verdict_rows(report: VerificationReport, extra: Dict[str, Any]) -> List[Dict[str, Any]]:
    return [{**extra, **row} for row in report.csv_rows()]


def _report_summary(report: VerificationReport) -> Dict[str, Any]:
    return {
        "overall": report.overall.value,
        "verified": len(report.verdicts),
        "rejected": len(report.rejected_steps),
        "acceptance_rate": report.acceptance_rate,
        "max_distance": max((v.distance for v in report.verdicts), default=None),
        "max_nre": report.max_normalized_error,
        "issues": [issue.model_dump(mode="json") for issue in report.issues],
        "verification_fp": report.ledger.fp_units,
        "initial_final_distance": report.initial_final_distance,
    }


# Experiments, one repeat each

def _baseline_honest(spec: ExperimentSpec, dataset: Dataset, seed: int) -> RepeatResult:
    rng = np.random.default_rng(seed)
    honest = honest_run(spec, dataset, rng)
    delta = calibrate_delta(spec, honest, rng)
    rd = reference_distance(honest.config, dataset, spec.rd_trials, rng)
    report = verify(honest.proof, verifier_policy(spec, StaticThreshold(delta=delta)), honest.provider, rd=rd.rd)
    return RepeatResult(
        seed=seed,
        rows={"baseline_honest": _report_rows("honest", report, {"seed": seed})},
        summary={"delta": delta, "rd": rd.rd, "rd_degenerate": rd.degenerate,
                 "training_fp": honest.run.ledger.fp_units, "report": _report_summary(report)},
        invariants={"honest_acceptance_at_least_99pct": report.acceptance_rate >= 0.99},
    )


def _attack_infinitesimal(spec: ExperimentSpec, dataset: Dataset, seed: int) -> RepeatResult:
    rng = np.random.default_rng(seed)
    honest = honest_run(spec, dataset, rng)
    delta = spec.attack.delta or calibrate_delta(spec, honest, rng)
    rd = reference_distance(honest.config, dataset, spec.rd_trials, rng).rd
    start = adversary_start(honest, rng)
    k = honest.config.k
    needed = minimal_checkpoints(honest.final, start, delta, spec.attack.margin)
    if needed > spec.attack.max_checkpoints:
        raise ConfigurationError(
            f"infinitesimal spoof needs {needed} checkpoints (T >= {needed * k}), above the "
            f"limit of {spec.attack.max_checkpoints}; raise the noise or the threshold",
            minimal_T=needed * k,
        )
    spoof = infinitesimal_attack(honest.final, start, needed * k, k, delta, dataset, rng, spec.attack.margin,
                                 honest.config.batch_size)

    static = verifier_policy(spec, StaticThreshold(delta=delta))
    adaptive = verifier_policy(spec, AdaptiveThreshold(alpha=spec.attack.alpha))
    honest_report = verify(honest.proof, static, honest.provider, rd=rd)
    spoof_report = verify(spoof.proof, static, honest.provider, rd=rd)
    honest_adaptive = verify(honest.proof, adaptive, honest.provider)
    spoof_adaptive = verify(spoof.proof, adaptive, honest.provider)

    honest_updates = len(honest.proof.intervals())
    spoof_updates = len(spoof.proof.intervals())
    costs = compare_costs(gradient_work(honest.run.ledger), spoof.ledger, honest_updates, spoof_updates,
                          unit="checkpoint")
    expected_ratio = 1.0 / (3 * k)
    honest_nre = honest_report.max_normalized_error
    spoof_nre = spoof_report.max_normalized_error
    return RepeatResult(
        seed=seed,
        rows={"attack_infinitesimal": (_report_rows("honest", honest_report, {"seed": seed})
                                       + _report_rows("spoof", spoof_report, {"seed": seed}))},
        summary={
            "delta": delta, "rd": rd, "T": spoof.proof.T, "checkpoints": spoof_updates,
            "honest": _report_summary(honest_report), "spoof": _report_summary(spoof_report),
            "honest_adaptive": _report_summary(honest_adaptive), "spoof_adaptive": _report_summary(spoof_adaptive),
            "costs": costs.to_dict(), "expected_ratio": expected_ratio,
        },
        invariants={
            "spoof_passes_static": spoof_report.overall == Overall.VALID,
            "spoof_distances_within_margin": all(
                v.distance < delta / spec.attack.margin * (1 + 1e-9) for v in spoof_report.verdicts),
            "spoof_nre_below_fifth_of_honest": (
                honest_nre is not None and spoof_nre is not None and spoof_nre < 0.2 * honest_nre),
            "spoof_rejected_adaptive": len(spoof_adaptive.rejected_steps) >= 1,
            "honest_valid_adaptive": honest_adaptive.overall == Overall.VALID,
            "cost_matches_one_fp_per_checkpoint": abs(costs.spoof_per_unit - 1.0) <= 1e-9,
            # a short last honest interval lowers the honest per-checkpoint cost slightly
            "cost_ratio_matches_one_over_3k": abs(costs.ratio / expected_ratio - 1.0) <= 0.1,
        },
    )


def _attack_blindfold(spec: ExperimentSpec, dataset: Dataset, seed: int) -> RepeatResult:
    rng = np.random.default_rng(seed)
    params = spec.attack
    honest = honest_run(spec, dataset, rng)
    start = adversary_start(honest, rng)
    k, q, s = params.blindfold_k, params.q, params.s
    spoof = blindfold_topq_attack(honest.final, start, q, k, s, params.lr_large, dataset, rng,
                                  params.blindfold_epochs, honest.config.batch_size)
    proof = spoof.proof
    adaptive = AdaptiveThreshold(alpha=params.alpha)
    report_q = verify(proof, verifier_policy(spec, adaptive, q=q), honest.provider)
    report_more = verify(proof, verifier_policy(spec, adaptive, q=q + 1), honest.provider)

    planted_match = True
    norm_rows = []
    for epoch, intervals in proof.intervals_by_epoch().items():
        planted = {t for j, (t, _) in enumerate(intervals) if j < q}
        planted_match &= set(select_top_q(proof, epoch, q)) == planted
        for t, t_next in intervals:
            norm_rows.append({
                "seed": seed, "epoch": epoch, "t": t, "planted": int(t in planted),
                "norm_g": distance(Metric.L2, proof.checkpoint(t_next), proof.checkpoint(t)),
            })

    updates = len(proof.intervals())
    per_update = spoof.ledger.fp_units / updates
    expected = 3 * k * q / s + 1
    return RepeatResult(
        seed=seed,
        rows={
            "attack_blindfold": (_verdict_rows(report_q, {"seed": seed, "q": q})
                                 + _verdict_rows(report_more, {"seed": seed, "q": q + 1})),
            "blindfold_norms": norm_rows,
        },
        summary={"k": k, "q": q, "s": s, "fp_per_update": per_update, "expected_fp_per_update": expected,
                 "top_q": _report_summary(report_q), "top_q_plus_one": _report_summary(report_more)},
        invariants={
            "top_q_selects_planted": planted_match,
            "top_q_valid": report_q.overall == Overall.VALID,
            "top_q_plus_one_rejects": len(report_more.rejected_steps) >= 1,
            "cost_matches_formula": abs(per_update - expected) <= 1.0,
        },
    )


def _attack_interp(spec: ExperimentSpec, dataset: Dataset, seed: int) -> RepeatResult:
    rng = np.random.default_rng(seed)
    params = spec.attack
    honest = honest_run(spec, dataset, rng)
    delta = params.delta or calibrate_delta(spec, honest, rng)
    start = adversary_start(honest, rng)
    k = honest.config.k
    rd = reference_distance(honest.config, dataset, spec.rd_trials, rng).rd
    static = verifier_policy(spec, StaticThreshold(delta=delta))
    spoof = interp_perturb_attack(honest.final, start, k, delta, params.n_iter, dataset, rng,
                                  params.n_checkpoints, honest.config.lr, params.data_lr, honest.config.batch_size)
    report = verify(spoof.proof, static, DatasetProvider(spoof.dataset), rd=rd)
    per_update = spoof.ledger.fp_units / params.n_checkpoints
    costs = compare_costs(gradient_work(honest.run.ledger), spoof.ledger, len(honest.proof.intervals()),
                          params.n_checkpoints, unit="checkpoint")

    failed = set(spoof.params["failed_steps"])
    nre = dict(zip((v.step for v in report.verdicts), report.normalized_errors or []))
    rows = [
        {"seed": seed, "checkpoint": i * k, "residual": r, "failed": int(i * k in failed), "nre": nre.get(i * k)}
        for i, r in enumerate(spoof.params["residuals"])
    ]
    summary: Dict[str, Any] = {
        "delta": delta, "rd": rd, "fp_per_update": per_update,
        "measured_fp_per_update": spoof.ledger.measured_fp_units / params.n_checkpoints,
        "failures": len(failed), "report": _report_summary(report), "costs": costs.to_dict(),
    }
    invariants = {"cost_at_least_formula": per_update >= (43 * params.n_iter + 1) * k}

    # the infinitesimal spoof of the same victim from the same start, at the same threshold
    needed = minimal_checkpoints(honest.final, start, delta, params.margin)
    if needed <= params.max_checkpoints:
        inf = infinitesimal_attack(honest.final, start, needed * k, k, delta, dataset, rng, params.margin,
                                   honest.config.batch_size)
        inf_report = verify(inf.proof, static, honest.provider, rd=rd)
        against_inf = compare_costs(spoof.ledger, inf.ledger, params.n_checkpoints, needed, unit="checkpoint")
        summary["infinitesimal"] = _report_summary(inf_report)
        summary["infinitesimal_vs_interp_costs"] = against_inf.to_dict()
        invariants["infinitesimal_cheaper_per_checkpoint"] = against_inf.ratio < 1.0
        inf_nre, interp_nre = inf_report.max_normalized_error, report.max_normalized_error
        if inf_nre is not None and interp_nre is not None:
            invariants["infinitesimal_lower_nre"] = inf_nre < interp_nre
    else:
        logger.warning(f"Skipping the infinitesimal comparison: it needs {needed} checkpoints")
    return RepeatResult(seed=seed, rows={"attack_interp": rows}, summary=summary, invariants=invariants)


def _probe_ordering(spec: ExperimentSpec, dataset: Dataset, seed: int) -> RepeatResult:
    rng = np.random.default_rng(seed)
    honest = honest_run(spec, dataset, rng)
    adversary = honest.config.model_copy(update={
        "seed": int(rng.integers(2 ** 31)), "sampling_seed": int(rng.integers(2 ** 31)), "lr_schedule": None,
    })
    points, hist, by_pretrain = [], [], {}
    one_per_row = True
    for epochs in spec.attack.pretrain_epochs:
        current = pretrain_adversary(honest.final, dataset, adversary, epochs)
        probe = data_ordering_probe(honest.final, current, dataset, honest.config.lr)
        deltas = probe.series["delta_dist"]
        edges = probe.params["bin_edges"]
        one_per_row &= len(deltas) == len(dataset)
        points.extend({"seed": seed, "pretrain": epochs, "point": i, "delta_dist": d} for i, d in enumerate(deltas))
        hist.extend(
            {"seed": seed, "pretrain": epochs, "bin_left": edges[i], "bin_right": edges[i + 1], "count": c}
            for i, c in enumerate(probe.params["bin_counts"])
        )
        by_pretrain[str(epochs)] = {"fraction_positive": probe.params["fraction_positive"],
                                    "base_distance": probe.params["base_distance"]}
    return RepeatResult(
        seed=seed,
        rows={"probe_ordering": points, "probe_ordering_hist": hist},
        summary={"pretrain": by_pretrain},
        invariants={"one_delta_per_row": one_per_row},
    )


def _probe_synthesis(spec: ExperimentSpec, dataset: Dataset, seed: int) -> RepeatResult:
    rng = np.random.default_rng(seed)
    params = spec.attack
    honest = honest_run(spec, dataset, rng)
    probe = synthesis_probe(honest.final, adversary_start(honest, rng), params.probe_iters,
                            params.data_lr, params.model_lr, rng)
    dist, loss = probe.series["dist_loss"], probe.series["train_loss"]
    return RepeatResult(
        seed=seed,
        rows={"probe_synthesis": [
            {"seed": seed, "iter": i, "dist_loss": d, "train_loss": l} for i, (d, l) in enumerate(zip(dist, loss))
        ]},
        summary={"diverged": probe.diverged, "iterations": len(dist)},
        invariants={"curve_length": probe.diverged or len(dist) == params.probe_iters},
    )


def _attack_rna(spec: ExperimentSpec, dataset: Dataset, seed: int) -> RepeatResult:
    rng = np.random.default_rng(seed)
    params = spec.attack
    honest = honest_run(spec, dataset, rng)
    delta = calibrate_delta(spec, honest, rng)
    result = rna_attack(honest.final, adversary_start(honest, rng), params.rounds, params.m, dataset,
                        honest.config.lr, rng, honest.config.batch_size,
                        fp_budget=honest.run.ledger.fp_units, include_base=params.include_base)
    curve = result.distance_curve
    costs = compare_costs(honest.run.ledger, result.ledger, honest.proof.T, result.proof.T)
    return RepeatResult(
        seed=seed,
        rows={"attack_rna": [{"seed": seed, "round": i, "distance": d} for i, d in enumerate(curve)]},
        summary={"delta": delta, "rounds": result.rounds, "final_distance": result.final_distance,
                 "ridge_rounds": result.ridge_rounds, "costs": costs.to_dict()},
        invariants={
            "distance_nonincreasing": all(b <= a for a, b in zip(curve, curve[1:])),
            "no_valid_spoof_at_honest_budget": result.final_distance > 100 * delta,
            "within_honest_budget": result.ledger.fp_units <= honest.run.ledger.fp_units,
        },
    )


def _independent_runs(spec: ExperimentSpec, dataset: Dataset, seed: int) -> RepeatResult:
    rng = np.random.default_rng(seed)
    runs = [honest_run(spec, dataset, rng) for _ in range(spec.attack.independent_runs)]
    pairs = [
        {"seed": seed, "run_i": i, "run_j": j, "distance": distance(Metric.L2, a.final, b.final)}
        for (i, a), (j, b) in combinations(enumerate(runs), 2)
    ]
    test = t_test_one_tailed([row["distance"] for row in pairs])
    rd = reference_distance(runs[0].config, dataset, spec.rd_trials, rng)
    return RepeatResult(
        seed=seed,
        rows={"independent_runs": pairs},
        summary={"t_test": test.model_dump(), "rd": rd.rd, "rd_degenerate": rd.degenerate},
        invariants={
            "distance_far_above_rd": rd.rd > 0 and test.mean > 50 * rd.rd,
            "zero_distance_rejected": test.p_one_tailed < 1e-6,
        },
    )


def _threshold_curve(spec: ExperimentSpec, dataset: Dataset, seed: int) -> RepeatResult:
    rng = np.random.default_rng(seed)
    honest = honest_run(spec, dataset, rng)
    noise = verifier_policy(spec).noise
    if noise.is_silent:
        raise ConfigurationError("threshold_curve needs a reproduction noise model")
    sampler = HonestUpdateSampler(honest.proof, honest.provider, noise)
    taus = sorted(spec.taus)
    deltas = estimate_min_thresholds(sampler, spec.policy.metric, taus, spec.threshold_trials, rng)
    fresh = sample_distances(sampler, spec.policy.metric, spec.threshold_trials, rng)
    rows, tpr_ok = [], True
    for tau, delta in zip(taus, deltas):
        tpr = float(np.mean(fresh < delta))
        slack = 0.02 + 3 * math.sqrt(tau * (1 - tau) / spec.threshold_trials)
        tpr_ok &= tpr >= tau - slack
        rows.append({"seed": seed, "tau": tau, "delta_hat": delta, "tpr": tpr})
    return RepeatResult(
        seed=seed,
        rows={"threshold_curve": rows},
        summary={"delta_hat": dict(zip(map(str, taus), deltas))},
        invariants={
            "delta_monotone_in_tau": all(a <= b for a, b in zip(deltas, deltas[1:])),
            "tpr_at_least_tau": tpr_ok,
        },
    )


_EXPERIMENTS: Dict[ExperimentId, Callable[[ExperimentSpec, Dataset, int], RepeatResult]] = {
    ExperimentId.BASELINE_HONEST: _baseline_honest,
    ExperimentId.ATTACK_INFINITESIMAL: _attack_infinitesimal,
    ExperimentId.ATTACK_BLINDFOLD: _attack_blindfold,
    ExperimentId.ATTACK_INTERP: _attack_interp,
    ExperimentId.PROBE_ORDERING: _probe_ordering,
    ExperimentId.PROBE_SYNTHESIS: _probe_synthesis,
    ExperimentId.ATTACK_RNA: _attack_rna,
    ExperimentId.INDEPENDENT_RUNS: _independent_runs,
    ExperimentId.THRESHOLD_CURVE: _threshold_curve,
}

CSV_SCHEMAS: Dict[str, List[str]] = {
    "baseline_honest": ["seed", "proof", "t", "eps_repr", "delta", "nre"],
    "attack_infinitesimal": ["seed", "proof", "t", "eps_repr", "delta", "nre"],
    "attack_blindfold": ["seed", "q", "step", "dist", "threshold", "decision", "norm_g", "norm_gp"],
    "blindfold_norms": ["seed", "epoch", "t", "planted", "norm_g"],
    "attack_interp": ["seed", "checkpoint", "residual", "failed", "nre"],
    "probe_ordering": ["seed", "pretrain", "point", "delta_dist"],
    "probe_ordering_hist": ["seed", "pretrain", "bin_left", "bin_right", "count"],
    "probe_synthesis": ["seed", "iter", "dist_loss", "train_loss"],
    "attack_rna": ["seed", "round", "distance"],
    "independent_runs": ["seed", "run_i", "run_j", "distance"],
    "threshold_curve": ["seed", "tau", "delta_hat", "tpr"],
}

# Experiments whose single run already aggregates over many trainings.
_SINGLE_RUN = {ExperimentId.INDEPENDENT_RUNS}


def run(spec: ExperimentSpec, workers: Optional[int] = None) -> ExperimentOutcome:
    """Run every repeat of ``spec`` and write its artifacts to ``spec.out_dir``.

    Repeats run concurrently on ``workers`` threads; a single finalizer
    merges their rows in seed order.
    """
    workers = workers or SETTINGS.workers
    dataset = gen_dataset(spec.dataset.seed, spec.dataset)
    repeats = 1 if spec.id in _SINGLE_RUN else spec.repeats
    seeds = derive_seeds(spec.seed, repeats)
    experiment = _EXPERIMENTS[spec.id]
    logger.info(f"Running {spec.id.value}: {repeats} repeats on {workers} workers, seeds {seeds}")

    def one(seed: int) -> RepeatResult:
        try:
            return experiment(spec, dataset, seed)
        except PolForgeError as e:
            e.context.setdefault("experiment", spec.id.value)
            e.context.setdefault("seed", seed)
            logger.error(f"{spec.id.value} failed for seed {seed}: {e.message}")
            raise

    if workers > 1 and repeats > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(seed) for seed in seeds]
    return _finalize(spec, seeds, results)


def _finalize(spec: ExperimentSpec, seeds: List[int], results: List[RepeatResult]) -> ExperimentOutcome:
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    merged: Dict[str, List[Dict[str, Any]]] = {}
    invariants: Dict[str, bool] = {}
    for result in results:
        for name, rows in result.rows.items():
            merged.setdefault(name, []).extend(rows)
        for name, held in result.invariants.items():
            invariants[name] = invariants.get(name, True) and bool(held)

    artifacts = [write_csv(out_dir / f"{name}.csv", CSV_SCHEMAS[name], rows) for name, rows in merged.items()]
    summary = {
        "experiment": spec.id.value,
        "spec": spec.model_dump(mode="json"),
        "seeds": seeds,
        "repeats": [{"seed": r.seed, **r.summary, "invariants": r.invariants} for r in results],
        "invariants": invariants,
        "passed": all(invariants.values()),
    }
    summary_path = out_dir / "summary.json"
    with summary_path.open("w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, default=_json_default)
    artifacts.append(summary_path)

    failed = [name for name, held in invariants.items() if not held]
    if failed:
        logger.warning(f"{spec.id.value}: invariant checks failed: {failed}")
    else:
        logger.info(f"{spec.id.value}: all {len(invariants)} invariant checks passed")
    return ExperimentOutcome(experiment=spec.id, out_dir=out_dir, artifacts=artifacts,
                             invariants=invariants, summary=summary)


def load_summary_spec(path: Union[str, Path]) -> ExperimentSpec:
    """The exact spec a ``summary.json`` was produced from."""
    with Path(path).open("r", encoding="utf-8") as f:
        return ExperimentSpec.model_validate(json.load(f)["spec"])
