"""
FunnelKit Command Line Interface
One subcommand per pipeline stage (derive, net, enumerate, bundle, funnel,
distance, study, validate) plus `run`, which composes them end to end
"""

import argparse
import logging
import sys
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from app.config.config import ConfigManager, RunConfig
from app.core.control_grid import count_words, enumerate_words
from app.core.errors import CapacityError, FunnelKitError, InputValidationError
from app.core.param_derivation import (
    ConstantsChain, DiscretizationPlan, ModulusEstimate, derive_constants, epsilon_schedule, plan_modulus,
)
from app.core.sphere_net import SigmaNet, build_sigma_net, covering_check
from app.core.system_model import (
    DynamicsSpec, ProblemInstance, SamplingBox, catalog_system, validate_growth, validate_lipschitz,
)
from app.services.artifact_store import ArtifactStore, load_table
from app.services.funnel_assembly import TrajectoryBundle, attainable_slice, build_bundle, build_funnel
from app.services.set_metrics import (
    ErrorBudget, convergence_study, error_budget, hausdorff_funnel, hausdorff_points, hausdorff_uniform,
)

logger = logging.getLogger(__name__)

COMMANDS = ("derive", "net", "enumerate", "bundle", "funnel", "distance", "study", "validate", "run")


@dataclass
class ResolvedProblem:
    """Everything derived from a config before any word is enumerated"""
    spec: DynamicsSpec
    instance: ProblemInstance
    chain: ConstantsChain
    plan: DiscretizationPlan
    modulus: ModulusEstimate
    budget: ErrorBudget

    def constants_payload(self) -> Dict[str, Any]:
        return {
            "system": self.spec.summary(),
            "instance": self.instance.summary(),
            "constants": self.chain.to_dict(),
            "plan": self.plan.summary(),
            "modulus": self.modulus.describe(),
            "error_budget": self.budget.to_dict(),
        }


def build_system(config: RunConfig) -> DynamicsSpec:
    """Catalog system (with optional constant overrides) or a DSL system"""
    system = config.system
    declared = {name: getattr(system, name) for name in ("gamma1", "gamma2", "gamma3", "c")
                if getattr(system, name) is not None}
    if system.catalog is not None:
        spec = catalog_system(system.catalog)
        if not declared and system.label is None and system.validation_radius is None:
            return spec
        return DynamicsSpec.from_expressions(
            spec.source, spec.n, spec.m,
            gamma1=declared.get("gamma1", spec.gamma1), gamma2=declared.get("gamma2", spec.gamma2),
            gamma3=declared.get("gamma3", spec.gamma3), c=declared.get("c", spec.c),
            label=system.label or spec.label,
            validation_radius=system.validation_radius if system.validation_radius is not None
            else spec.validation_radius,
        )
    return DynamicsSpec.from_expressions(
        system.expressions, system.n, system.m, label=system.label or "custom",
        validation_radius=system.validation_radius, **declared,
    )


def build_instance(config: RunConfig, spec: DynamicsSpec) -> ProblemInstance:
    settings = config.instance
    x0 = settings.x0 if settings.x0 is not None else [0.0] * spec.n
    instance = ProblemInstance(t0=settings.t0, theta=settings.theta, x0=np.asarray(x0, dtype=float),
                               p=settings.p, r=settings.r)
    instance.check_dimensions(spec)
    return instance


def resolve_problem(config: RunConfig) -> ResolvedProblem:
    """System, instance, constant chain, plan (direct or epsilon mode), modulus and error budget"""
    spec = build_system(config)
    instance = build_instance(config, spec)
    chain = derive_constants(spec, instance)
    settings = config.plan
    R_star = settings.R_star if settings.R_star is not None else 1.0

    if config.mode == "epsilon":
        plan = epsilon_schedule(
            chain, instance, settings.epsilon, R_star, spec=spec, omega_slope=settings.omega_slope,
            grid_density=settings.grid_density, seed=config.seed,
            max_steps=config.caps.steps, max_levels=config.caps.levels,
        )
    else:
        plan = DiscretizationPlan.direct(instance, settings.beta, settings.N, settings.q, settings.sigma,
                                         R_star=R_star)
    modulus = plan_modulus(spec, instance, chain, plan, settings.omega_slope, settings.grid_density, config.seed)
    budget = error_budget(chain, plan, modulus)
    logger.info(f"✅ Resolved {spec.label} in {plan.mode} mode: N={plan.N}, q={plan.q}, "
                f"sigma={plan.sigma:g}, beta={plan.beta:g}")
    return ResolvedProblem(spec=spec, instance=instance, chain=chain, plan=plan, modulus=modulus, budget=budget)


def _print_table(title: str, rows: Dict[str, Any]) -> None:
    print(title)
    print("=" * 50)
    width = max((len(key) for key in rows), default=0)
    for key, value in rows.items():
        if isinstance(value, float):
            value = f"{value:.12g}"
        print(f"{key.ljust(width)}  {value}")
    print()


def _net(config: RunConfig, problem: ResolvedProblem) -> SigmaNet:
    return build_sigma_net(problem.spec.m, problem.plan.sigma, config.caps.net_points)


def _bundle(config: RunConfig, problem: ResolvedProblem, net: SigmaNet, mode: str) -> TrajectoryBundle:
    return build_bundle(problem.spec, problem.instance, problem.plan, net, mode=mode,
                        substeps=config.oracle.substeps, cap=config.caps.words,
                        progress_every=config.logging.progress_every)


def _bundle_counts(bundle: TrajectoryBundle) -> Dict[str, Any]:
    # wall-clock seconds stay out of the manifest
    return {key: value for key, value in bundle.metadata.items() if key != "seconds"}


def _distances(problem: ResolvedProblem, euler: TrajectoryBundle, oracle: TrajectoryBundle) -> Dict[str, Any]:
    theta = problem.instance.theta
    return {
        "uniform": hausdorff_uniform(euler, oracle),
        "slice_theta": hausdorff_points(attainable_slice(oracle, theta), attainable_slice(euler, theta)),
        "funnel": hausdorff_funnel(build_funnel(euler), build_funnel(oracle)),
    }


def _study_reference(config: RunConfig, instance: ProblemInstance, R_star: float):
    study = config.study
    if study.reference_plan is not None:
        entry = study.reference_plan
        return DiscretizationPlan.direct(instance, entry["beta"], entry["N"], entry["q"], entry["sigma"], R_star)
    if isinstance(study.reference_points, str):
        return load_table(study.reference_points).to_numpy(dtype=float)
    return np.asarray(study.reference_points, dtype=float)


def _run_study(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore) -> Dict[str, Any]:
    study = config.study
    if not study.plans:
        raise InputValidationError("study.plans: no study plans configured")
    R_star = problem.plan.R_star
    plans = [DiscretizationPlan.direct(problem.instance, e["beta"], e["N"], e["q"], e["sigma"], R_star)
             for e in study.plans]
    labels = [e.get("label", f"N={p.N},q={p.q},sigma={p.sigma:g}") for e, p in zip(study.plans, plans)]
    frame = convergence_study(
        problem.spec, problem.instance, plans, _study_reference(config, problem.instance, R_star),
        labels=labels, reference_substeps=study.reference_substeps, word_cap=config.caps.words,
        point_cap=config.caps.net_points, omega_slope=config.plan.omega_slope,
        grid_density=config.plan.grid_density, seed=config.seed, record_wall_time=study.record_wall_time,
    )
    store.write_study(frame)
    print(frame.to_string(index=False))
    return {"study_rows": len(frame), "study_capacity_rows": int((frame["status"] == "capacity").sum())}


def cmd_derive(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore, args) -> Dict[str, Any]:
    _print_table("Constant chain", problem.chain.to_dict())
    _print_table("Discretization plan", {k: v for k, v in problem.plan.summary().items() if k != "targets"})
    _print_table("Error budget", {k: v for k, v in problem.budget.to_dict().items()
                                  if not isinstance(v, dict)})
    store.write_constants(problem.constants_payload())
    return {}


def cmd_net(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore, args) -> Dict[str, Any]:
    net = _net(config, problem)
    store.write_net(net)
    report = covering_check(net, config.sampling.covering_samples, seed=config.seed)
    print(f"m={net.m} sigma={net.sigma:g} points={net.size} certified_radius={net.certified_radius:.12g} "
          f"max_gap={report.max_gap:.12g}")
    return {"net_points": net.size, "covering_max_gap": report.max_gap, "covering_passed": report.passed}


def cmd_enumerate(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore, args) -> Dict[str, Any]:
    net = _net(config, problem)
    total = count_words(problem.plan, net)
    print(f"words={total}")
    if args.count_only:
        return {"words": total}
    if total > config.caps.words:
        raise CapacityError(f"{total} admissible words exceed the cap of {config.caps.words}",
                            found=total, cap=config.caps.words)
    store.write_words(enumerate_words(problem.plan, net, cap=config.caps.words,
                                      progress_every=config.logging.progress_every))
    return {"words": total}


def cmd_bundle(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore, args) -> Dict[str, Any]:
    bundle = _bundle(config, problem, _net(config, problem), args.mode)
    store.write_bundle(bundle, name="bundle.csv" if args.mode == "euler" else "bundle_oracle.csv")
    print(f"{args.mode} bundle: {len(bundle)} trajectories, {len(bundle.times)} samples each")
    return _bundle_counts(bundle)


def cmd_funnel(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore, args) -> Dict[str, Any]:
    bundle = _bundle(config, problem, _net(config, problem), args.mode)
    cloud = build_funnel(bundle)
    store.write_funnel(cloud, name="funnel.csv" if args.mode == "euler" else "funnel_oracle.csv")
    print(f"funnel: {cloud.size} points, slice sizes {cloud.slice_sizes()}")
    return {**_bundle_counts(bundle), "funnel_points": cloud.size, "slice_sizes": cloud.slice_sizes()}


def cmd_distance(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore, args) -> Dict[str, Any]:
    net = _net(config, problem)
    euler = _bundle(config, problem, net, "euler")
    oracle = _bundle(config, problem, net, "oracle")
    reports = _distances(problem, euler, oracle)
    store.write_distances(reports)
    for metric, report in reports.items():
        print(f"{metric}: hausdorff={report.hausdorff:.12g}")
    return {"words": len(euler), **{f"h_{metric}": r.hausdorff for metric, r in reports.items()}}


def cmd_study(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore, args) -> Dict[str, Any]:
    return _run_study(config, problem, store)


def cmd_validate(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore, args) -> Dict[str, Any]:
    """Sample the declared growth and Lipschitz constants of the system"""
    spec, instance, plan = problem.spec, problem.instance, problem.plan
    sampling = config.sampling
    box = SamplingBox(
        x_radius=sampling.growth_x_radius if sampling.growth_x_radius is not None else problem.chain.alpha_star,
        u_radius=sampling.growth_u_radius if sampling.growth_u_radius is not None else plan.beta,
    )
    growth = validate_growth(spec, instance, box, sampling.validation_samples, seed=config.seed)
    lipschitz = validate_lipschitz(spec, problem.chain.alpha_star, plan.beta, sampling.validation_samples,
                                   seed=config.seed, instance=instance)
    _print_table("Growth check", {"passed": growth.passed, "max_ratio": growth.max_ratio,
                                  "declared_c": growth.declared_c, "violations": growth.violations})
    _print_table("Lipschitz check", {"passed": lipschitz.passed, "max_ratio": lipschitz.max_ratio,
                                     "violations": lipschitz.violations, "degenerate": lipschitz.degenerate})
    store.write_json("validation.json", {"growth": asdict(growth), "lipschitz": asdict(lipschitz)})
    return {"growth_passed": growth.passed, "lipschitz_passed": lipschitz.passed}


def run_pipeline(config: RunConfig, problem: Optional[ResolvedProblem] = None,
                 store: Optional[ArtifactStore] = None) -> Dict[str, Any]:
    """
    Full run: constants, net, words, Euler bundle, funnel, then the oracle
    comparison and the convergence study when configured. Returns the counts
    written to the manifest.
    """
    problem = problem or resolve_problem(config)
    store = store or ArtifactStore(config.output.out_dir)
    store.write_constants(problem.constants_payload())

    net = _net(config, problem)
    store.write_net(net)
    counts: Dict[str, Any] = {"net_points": net.size}

    euler = _bundle(config, problem, net, "euler")
    counts["words"] = len(euler)
    if config.output.write_words:
        store.write_words(euler.words)
    if config.output.write_bundle:
        store.write_bundle(euler)

    cloud = build_funnel(euler)
    store.write_funnel(cloud)
    counts.update(funnel_points=cloud.size, slice_sizes=cloud.slice_sizes())

    if config.oracle.enabled:
        oracle = _bundle(config, problem, net, "oracle")
        if config.output.write_bundle:
            store.write_bundle(oracle, name="bundle_oracle.csv")
        if config.output.distance:
            reports = _distances(problem, euler, oracle)
            store.write_distances(reports)
            counts.update({f"h_{metric}": r.hausdorff for metric, r in reports.items()})

    if config.study.plans:
        counts.update(_run_study(config, problem, store))

    logger.info(f"✅ Pipeline finished: {counts['words']} words, {cloud.size} funnel points")
    return counts


def cmd_run(config: RunConfig, problem: ResolvedProblem, store: ArtifactStore, args) -> Dict[str, Any]:
    return run_pipeline(config, problem, store)


HANDLERS: Dict[str, Callable] = {
    "derive": cmd_derive,
    "net": cmd_net,
    "enumerate": cmd_enumerate,
    "bundle": cmd_bundle,
    "funnel": cmd_funnel,
    "distance": cmd_distance,
    "study": cmd_study,
    "validate": cmd_validate,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funnelkit",
                                     description="Grid approximation of attainable sets and integral funnels")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = commands.add_parser(name, help=(HANDLERS[name].__doc__ or "").strip() or None)
        sub.add_argument("--config", required=True, help="Path to the JSON run configuration")
        sub.add_argument("--out", default=None, help="Output directory (overrides output.out_dir)")
        sub.add_argument("--seed", type=int, default=None, help="Seed for every sampled check")
        sub.add_argument("--cap", type=int, default=None, help="Maximum number of control words")
        if name == "enumerate":
            sub.add_argument("--count-only", action="store_true", help="Print the word count without writing")
        if name in ("bundle", "funnel"):
            sub.add_argument("--mode", choices=("euler", "oracle"), default="euler")
    return parser


def _apply_logging(config: RunConfig) -> None:
    root = logging.getLogger()
    root.setLevel(getattr(logging, config.logging.level.upper()))
    if config.logging.file:
        handler = logging.FileHandler(config.logging.file, encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
        root.addHandler(handler)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code"""
    args = build_parser().parse_args(argv)
    out_dir: Optional[str] = args.out
    store: Optional[ArtifactStore] = None

    try:
        manager = ConfigManager(args.config)
        config = manager.config.with_overrides(out_dir=args.out, seed=args.seed, word_cap=args.cap)
        out_dir = config.output.out_dir
        _apply_logging(config)

        store = ArtifactStore(out_dir)
        problem = resolve_problem(config)
        counts = HANDLERS[args.command](config, problem, store, args)
        echo = config.to_dict()
        echo["command"] = args.command
        store.write_manifest(echo, counts)
        return 0

    except FunnelKitError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        if out_dir is not None:
            store = store or ArtifactStore(out_dir)
            store.write_error(e)
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected failure: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
