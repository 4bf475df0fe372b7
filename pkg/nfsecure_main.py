"""
Near-field secure ISAC simulator: command-line entry point.

    python nfsecure_main.py --config config/paper_vi.toml --mode gbd --gamma1 3 --gamma2 0.15
"""

import argparse
import logging
import os
import sys
import time
import numpy as np
from typing import Optional, Sequence

from nfsecure_utils.benders_decomposition import gbd_solve
from nfsecure_utils.channel_model import beampattern
from nfsecure_utils.config_manager import MODES, PROFILES, ConfigManager, RunConfig, parse_gamma1, parse_gamma2
from nfsecure_utils.conic_solver import ConicSolver
from nfsecure_utils.data_validation import (
    ConfigValidationError,
    DataValidationError,
    DegenerateGeometryError,
    NfSecureError,
    NumericalFailureError,
    SolverFailureError,
    UnobservableTargetError,
)
from nfsecure_utils.episode_simulator import (
    Scenario,
    frozen_slot_instance,
    records_frame,
    run_episode,
    speed_study,
)
from nfsecure_utils.eve_tracker import predict
from nfsecure_utils.metrics_calculator import metrics, verify_design
from nfsecure_utils.output_writer import OutputWriter, design_frame
from nfsecure_utils.pareto_engine import pareto_frame, pareto_sweep, threshold_sweep
from nfsecure_utils.uncertainty_region import UncertaintyBox
from nfsecure_utils.zf_sca_design import zfsca_solve

logger = logging.getLogger("nfsecure")

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4
DEFAULT_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config", "paper_vi.toml")


def exit_code_for(status: str) -> int:
    if status == "optimal":
        return EXIT_OK
    if status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfsecure",
        description="Sensing-aided secure near-field transmission: scheduling, beamforming and tracking",
    )
    parser.add_argument("--config", default=DEFAULT_CONFIG, help="scenario file (TOML)")
    parser.add_argument("--mode", help=f"one of {', '.join(MODES)}")
    parser.add_argument("--gamma1", help="minimum served users: int, 'a:b' or 'a,b,c'")
    parser.add_argument("--gamma2", help="tracking bound on Tr(C): real, 'start:stop:count' or 'a,b'")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--tol", type=float, help="conic solver tolerance")
    parser.add_argument("--profile", choices=PROFILES, help="desk (N=16, K<=5 for GBD modes) or paper")
    parser.add_argument("--policy", help="episode/sweep policy: gbd, zfsca, correlation_baseline, conventional")
    parser.add_argument("--slots", type=int, help="episode length")
    parser.add_argument("--workers", type=int, help="threads for independent solves")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def apply_overrides(run: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags take precedence over the [run] and [thresholds] sections"""
    if args.mode is not None:
        run.mode = args.mode
    if args.gamma1 is not None:
        values = parse_gamma1(args.gamma1)
        run.gamma1_range = values
        run.gamma1 = values[0]
        if len(values) > 1 and run.mode != "pareto":
            raise ConfigValidationError("gamma1", f"a range is only valid in pareto mode, got '{args.gamma1}'")
    if args.gamma2 is not None:
        values = parse_gamma2(args.gamma2)
        run.gamma2_range = values
        run.gamma2 = values[0]
        if len(values) > 1 and run.mode != "pareto":
            raise ConfigValidationError("gamma2", f"a range is only valid in pareto mode, got '{args.gamma2}'")
    for flag, name in (("seed", "seed"), ("out", "out_dir"), ("tol", "tolerance"), ("profile", "profile"),
                       ("policy", "policy"), ("slots", "slots"), ("workers", "workers")):
        value = getattr(args, flag)
        if value is not None:
            setattr(run, name, value)
    return run.validate()


def run_design(scenario: Scenario, run: RunConfig, solver: ConicSolver, writer: OutputWriter) -> str:
    """gbd / zfsca: one frozen slot, one design"""
    instance = frozen_slot_instance(scenario, run.gamma1, run.gamma2)
    print(f"🔍 Designing slot with {instance.num_users} users, N={instance.num_antennas}, "
          f"gamma1={run.gamma1}, gamma2={run.gamma2:g}")
    if run.mode == "gbd":
        design, trace = gbd_solve(instance, run.epsilon, solver)
        trace_frame = trace.to_frame()
    else:
        design, state = zfsca_solve(instance, epsilon=run.epsilon, solver=solver)
        trace_frame = state.to_frame()

    writer.table(design_frame(design, run.mode, run.gamma1, run.gamma2, run.seed))
    writer.table(trace_frame, "trace")
    if design.feasible:
        prior = predict(scenario.initial_belief, scenario.consts.slot_duration, scenario.consts.process_covariance)
        box = UncertaintyBox.from_belief(prior)
        check = verify_design(design, instance, scenario.geometry, box, seed=run.seed)
        print(f"✅ {design.status}: {design.objective:.6g} W, {design.served} users served, "
              f"planned Tr(C)={check['planned_trace']:.4g}, worst leakage {check['worst_leakage']:.4g} bps/Hz")
    else:
        print(f"❌ No feasible design ({design.diagnostics.get('reason', design.status)})")
    return design.status


def run_episode_mode(scenario: Scenario, run: RunConfig, solver: ConicSolver, writer: OutputWriter) -> str:
    print(f"🔍 Running {scenario.num_slots}-slot episode with policy '{run.policy}'...")
    records = run_episode(scenario, run.policy, run.gamma1, run.gamma2, solver, run.epsilon, run.seed)
    writer.table(records_frame(records))
    summary = metrics(records, scenario, seed=run.seed)
    writer.summary(summary)
    if run.speeds_mps:
        study = speed_study(scenario, run.speeds_mps, ("gbd", "conventional"), run.gamma1, run.gamma2,
                            run.repetitions, solver, run.workers)
        writer.table(study, "speed")

    print(f"📊 Average power {summary['average_power_w']:.6g} W, mean served {summary['mean_served']:.2f}, "
          f"mean Tr(C) {summary['mean_posterior_trace']:.4g}, {summary['infeasible_slots']} infeasible slots")
    return "optimal" if summary['feasible_slots'] > 0 else "infeasible"


def run_pareto(scenario: Scenario, run: RunConfig, solver: ConicSolver, writer: OutputWriter) -> str:
    gamma1_values = run.gamma1_range or [run.gamma1]
    gamma2_values = run.gamma2_range or [run.gamma2]
    instance = frozen_slot_instance(scenario, min(gamma1_values), max(gamma2_values))
    method = run.policy if run.policy in ("gbd", "zfsca", "enumeration") else "gbd"
    points = pareto_sweep(instance, gamma1_values, gamma2_values, solver, run.epsilon, run.workers, method)
    writer.table(pareto_frame(points))
    return "optimal" if any(p.feasible for p in points) else "infeasible"


def run_sweep(scenario: Scenario, run: RunConfig, solver: ConicSolver, writer: OutputWriter) -> str:
    instance = frozen_slot_instance(scenario, run.gamma1, run.gamma2)
    policy = run.policy if run.policy != "conventional" else "gbd"
    print(f"🔍 Sweeping {run.sweep_parameter} over {len(run.sweep_values)} values with policy '{policy}'...")
    frame = threshold_sweep(instance, run.sweep_parameter, run.sweep_values, run.gamma1, run.gamma2, policy,
                            solver, run.epsilon, run.workers)
    writer.table(frame)
    return "optimal" if frame['feasible'].any() else "infeasible"


def run_beampattern(scenario: Scenario, run: RunConfig, solver: ConicSolver, writer: OutputWriter) -> str:
    """Normalized sensing and information beampatterns of the frozen-slot design"""
    instance = frozen_slot_instance(scenario, run.gamma1, run.gamma2)
    if run.policy == "zfsca":
        design, _ = zfsca_solve(instance, epsilon=run.epsilon, solver=solver)
    else:
        design, _ = gbd_solve(instance, run.epsilon, solver)
    if not design.feasible:
        print("❌ No feasible design to draw")
        return design.status

    angles_deg = np.linspace(*run.grid_angles_deg)
    distances_m = np.linspace(*run.grid_distances_m)
    angles = np.deg2rad(angles_deg)
    point = design.point()
    writer.grid(beampattern(point.sensing_covariance, scenario.geometry, angles, distances_m),
                angles_deg, distances_m, "sensing")
    for k in np.flatnonzero(point.schedule):
        writer.grid(beampattern(point.covariances[k], scenario.geometry, angles, distances_m),
                    angles_deg, distances_m, f"info{k}")
    writer.table(design_frame(design, run.mode, run.gamma1, run.gamma2, run.seed))
    print(f"🎯 Beampatterns on a {distances_m.size}x{angles_deg.size} grid for {design.served} users")
    return design.status


def run_selftest(run: RunConfig) -> str:
    """Fast test suite; slow end-to-end tests are skipped"""
    import pytest

    tests = os.path.join(os.path.dirname(os.path.abspath(__file__)), "tests")
    code = pytest.main([tests, "-q", "-m", "not slow"])
    return "optimal" if code == 0 else "not_converged"


HANDLERS = {
    "gbd": run_design,
    "zfsca": run_design,
    "episode": run_episode_mode,
    "pareto": run_pareto,
    "sweep": run_sweep,
    "beampattern": run_beampattern,
}


def dispatch(scenario: Optional[Scenario], run: RunConfig) -> int:
    """Run the selected mode and return the process exit status"""
    start = time.time()
    gamma1 = run.gamma1_range if run.mode == "pareto" else run.gamma1
    gamma2 = run.gamma2_range if run.mode == "pareto" else run.gamma2
    writer = OutputWriter(run.out_dir, run.mode, run.seed, gamma1, gamma2)
    try:
        if run.mode == "selftest":
            status = run_selftest(run)
        else:
            solver = ConicSolver(tolerance=run.tolerance)
            status = HANDLERS[run.mode](scenario, run, solver, writer)
        code = exit_code_for(status)
    except (SolverFailureError, NumericalFailureError, UnobservableTargetError) as e:
        logger.error(str(e))
        status, code = "solver_failure", EXIT_SOLVER
    except (DegenerateGeometryError, DataValidationError) as e:
        logger.error(str(e))
        status, code = "config_error", EXIT_CONFIG

    for path in writer.written:
        print(f"💾 {path}")
    print(f"STATUS mode={run.mode} status={status} exit={code} seed={run.seed} "
          f"files={len(writer.written)} elapsed_s={time.time() - start:.1f}")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        manager = ConfigManager(args.config)
        run = apply_overrides(manager.build_run_config(), args)
        scenario = None
        if run.mode != "selftest":
            scenario = manager.build_scenario(run.profile, run.mode, seed=run.seed, slots=run.slots)
    except NfSecureError as e:
        key = getattr(e, "key", "config")
        print(f"❌ Configuration error: {e}")
        print(f"STATUS mode={args.mode or 'unknown'} status=config_error exit={EXIT_CONFIG} key={key}")
        return EXIT_CONFIG
    return dispatch(scenario, run)


if __name__ == "__main__":
    sys.exit(main())
