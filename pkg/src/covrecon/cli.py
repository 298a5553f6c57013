"""Command-line front end.

Subcommands:
  sample       draw a batch of discretized field realizations -> batch.csv
  estimate     sample and estimate the covariance -> covariance.txt + report
  reconstruct  full pipeline at a single (n, M, L) -> report.json + spectra
  study        replicated (L, h, M) grid -> study_*.csv (+ cells/ for resume)
  plan         a-priori parameter coupling for a target accuracy -> plan.json

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 infeasible plan.
Single-combination commands (sample, estimate, reconstruct) use the first
element of each study list (ns, Ms, Ls) and draw with the configured seed.
"""

import argparse
import os
import sys

import numpy as np

from . import artifacts, estimators, fem, fields, mercer, planner, spectral
from . import config as config_mod
from ._version import __version__
from .errors import (EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC, EXIT_OK,
                     ConfigError, InfeasiblePlanError, NumericError)

_CASE_NUMBERS = {planner.CASE_SMALL: 1, planner.CASE_LOG: 2,
                 planner.CASE_RATE: 3}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="covrecon",
        description="Covariance operator reconstruction from sampled "
                    "Gaussian field data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("sample", cmd_sample), ("estimate", cmd_estimate),
                     ("reconstruct", cmd_reconstruct), ("study", cmd_study),
                     ("plan", cmd_plan)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help="override the config output directory")
        if name == "study":
            p.add_argument("--workers", type=int, default=1,
                           help="process pool size for grid cells")
            p.add_argument("--resume", action="store_true",
                           help="reuse completed cells from out/cells")
        if name == "plan":
            p.add_argument("--epsilon", type=float, required=True,
                           help="target accuracy in (0, 1)")
            p.add_argument("--regime", type=int, choices=(1, 2, 3),
                           default=None, help="force a planner case")
        p.set_defaults(handler=fn)
    return parser


def _load(args):
    cfg = config_mod.load_config(args.config, seed=args.seed,
                                 out_dir=args.out)
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def _single(cfg):
    """The (n, M, L) combination used by single-shot commands."""
    return cfg.ns[0], cfg.Ms[0], cfg.Ls[0]


def _draw(cfg, n, M):
    field = fields.brownian_field(cfg.d, cfg.delta)
    space = fem.build_space(cfg.d, n)
    batch = fields.draw_batch(field, space, M, mode=cfg.mode, seed=cfg.seed,
                              kl_trunc=cfg.kl_trunc, q=cfg.q)
    return field, space, batch


def cmd_sample(cfg, args):
    n, M, _ = _single(cfg)
    _, space, batch = _draw(cfg, n, M)
    path = os.path.join(cfg.out_dir, "batch.csv")
    artifacts.write_batch_csv(path, batch, cfg)
    artifacts.write_sidecar(path[:-4] + ".meta.json", cfg,
                            n=n, M=M, Q_h=space.dof_count, mode=batch.mode,
                            kl_trunc=batch.kl_trunc, seed=batch.seed,
                            field_kind=batch.field_kind)
    print("wrote %s (%d samples x %d dofs)" % (path, M, space.dof_count))
    return EXIT_OK


def _estimate(cfg, space, field, batch):
    if cfg.estimator == "Exact":
        sigma = fields.exact_discrete_covariance(field, space)
        return estimators.TaperedCovariance(sigma, tau=0, alpha=None,
                                            estimator_kind="Exact", M=0)
    alpha = cfg.alpha if cfg.estimator == "Tapered" else None
    return estimators.estimate_covariance(batch, alpha=alpha)


def cmd_estimate(cfg, args):
    n, M, _ = _single(cfg)
    field, space, batch = _draw(cfg, n, M)
    cov = _estimate(cfg, space, field, batch)
    path = os.path.join(cfg.out_dir, "covariance.txt")
    artifacts.write_covariance(path, cov, cfg)
    h = space.mesh.h
    check = estimators.decay_class_check(cov.matrix, cfg.alpha,
                                         cfg.calibration["C1"],
                                         cfg.calibration["C2"])
    report = dict(
        estimator=cov.estimator_kind, tau=cov.tau, M=cov.M,
        Q_h=space.dof_count,
        decay_check=dict(alpha=check.alpha, C1_est=check.C1_est,
                         lambda_max=check.lambda_max, passes=check.passes),
        rho_tilde=estimators.rho_tilde(h, max(M, 1), cfg.alpha, cfg.d, cfg.s))
    if cfg.estimator != "Exact":
        sub = estimators.subgaussian_diagnostic(batch)
        report["subgaussian"] = dict(c_inf_hat=sub.c_inf_hat,
                                     rho_inv_nodal=sub.rho_inv_nodal)
    artifacts.write_json(os.path.join(cfg.out_dir, "estimate_report.json"),
                         report, cfg)
    artifacts.write_sidecar(path[:-4] + ".meta.json", cfg, n=n, M=M)
    print("wrote %s (%s, tau=%d)" % (path, cov.estimator_kind, cov.tau))
    return EXIT_OK


def cmd_reconstruct(cfg, args):
    n, M, L = _single(cfg)
    field = fields.brownian_field(cfg.d, cfg.delta)
    oracle = fields.brownian_oracle(cfg.d)
    space = fem.build_space(cfg.d, n)
    if L > space.dof_count:
        raise ConfigError("study.Ls: truncation rank L=%d exceeds the dof "
                          "count Q_h=%d" % (L, space.dof_count))
    mass = fem.assemble_mass(space)
    sigma_exact = fields.exact_discrete_covariance(field, space)
    s_exact = spectral.transform(sigma_exact, mass, spectral.SOURCE_EXACT)
    exact_spec = spectral.eigensolve(s_exact)

    if cfg.estimator == "Exact":
        batch = None
        cov = estimators.TaperedCovariance(sigma_exact, tau=0, alpha=None,
                                           estimator_kind="Exact", M=0)
    else:
        batch = fields.draw_batch(field, space, M, mode=cfg.mode,
                                  seed=cfg.seed, kl_trunc=cfg.kl_trunc,
                                  q=cfg.q)
        cov = _estimate(cfg, space, field, batch)
    s_est = spectral.transform(cov, mass, spectral.SOURCE_ESTIMATED)
    est_spec = spectral.eigensolve(s_est)
    diag = spectral.diagnostics(exact_spec, est_spec, s_exact, s_est, oracle,
                                L, C1=cfg.calibration["C1"],
                                C=cfg.calibration["C"], s=cfg.s)
    est_aligned = spectral.align_signs(exact_spec, est_spec)
    report = mercer.error_decomposition(field, oracle, exact_spec, est_spec,
                                        L, q=cfg.q)

    profile = planner.brownian_profile(d=cfg.d, s=cfg.s, alpha=cfg.alpha,
                                       calibration=cfg.calibration)
    p0 = planner.p0_bound(profile, space.dof_count, max(cov.tau, 2),
                          cov.M, L)
    neg = est_spec.eigenvalues[est_spec.eigenvalues < 0]
    payload = dict(
        n=n, M=cov.M, L=L, estimator=cov.estimator_kind, tau=cov.tau,
        errors=dict(e1=report.e1, e2=report.e2, e3=report.e3,
                    total=report.total, triangle_slack=report.triangle_slack,
                    q=report.q,
                    near_degenerate_split=report.near_degenerate_split),
        diagnostics=dict(
            weyl_bound=diag.weyl_bound,
            eigenvalue_dev=diag.eigenvalue_dev[:L],
            discrete_gaps=diag.discrete_gaps,
            continuous_gaps=diag.continuous_gaps,
            gap_condition_ok=diag.gap_condition_ok,
            quarter_gap_per_ell=diag.quarter_gap_per_ell,
            davis_kahan_bounds=diag.davis_kahan_bounds,
            sandwich_interval=list(diag.sandwich_interval),
            cov_diff_norm=diag.cov_diff_norm,
            theorem_consistent=diag.theorem_consistent,
            p0=p0,
            n_negative_eigenvalues=int(neg.size),
            min_eigenvalue=float(est_spec.eigenvalues[-1]),
            negatives_below_weyl=bool(
                neg.size == 0 or np.max(np.abs(neg)) <= diag.weyl_bound)))
    artifacts.write_json(os.path.join(cfg.out_dir, "report.json"), payload,
                         cfg)
    artifacts.write_spectrum_csv(os.path.join(cfg.out_dir, "spectrum.csv"),
                                 est_aligned, L, cfg)
    artifacts.write_spectrum_csv(
        os.path.join(cfg.out_dir, "spectrum_exact.csv"), exact_spec, L, cfg)
    artifacts.write_sidecar(os.path.join(cfg.out_dir, "report.meta.json"),
                            cfg, n=n, M=M, L=L)
    print("wrote %s (total=%.6g, e1=%.6g, e2=%.6g, e3=%.6g)"
          % (os.path.join(cfg.out_dir, "report.json"), report.total,
             report.e1, report.e2, report.e3))
    return EXIT_OK


def cmd_study(cfg, args):
    if cfg.estimator == "Exact":
        raise ConfigError("estimator.kind: studies need MLE or Tapered, "
                          "not Exact")
    cell_dir = os.path.join(cfg.out_dir, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    loader = (lambda idx: artifacts.load_cell(cell_dir, idx)) \
        if args.resume else None
    saver = lambda res: artifacts.save_cell(cell_dir, res, cfg)
    results = mercer.expected_error_study(cfg, workers=args.workers,
                                          cell_loader=loader,
                                          cell_saver=saver)
    rates = mercer.study_rates(results)
    summary, diag, rates_path = artifacts.write_study_csvs(
        cfg.out_dir, results, rates, cfg)
    artifacts.write_sidecar(os.path.join(cfg.out_dir, "study.meta.json"),
                            cfg, cells=len(results),
                            failed=sum(1 for r in results if not r.ok))
    failed = [r for r in results if not r.ok]
    print("study complete: %d cells (%d failed); wrote %s, %s, %s"
          % (len(results), len(failed), summary, diag, rates_path))
    for r in failed:
        print("  cell %d (L=%d, n=%d, M=%d) failed: %s"
              % (r.index, r.L, r.n, r.M, r.error), file=sys.stderr)
    return EXIT_OK


def _plan_payload(plan):
    return dict(
        epsilon=plan.epsilon, case=plan.case_tag,
        case_number=_CASE_NUMBERS[plan.case_tag], L=plan.L_eps, M=plan.M_eps,
        h=plan.h_eps, h_interval=list(plan.h_interval),
        thresholds=plan.thresholds, feasible=plan.feasible,
        reason=plan.reason, binding=plan.binding, p0_planned=plan.p0_planned,
        notes=plan.notes,
        candidates=[dict(case=tag, M=M, feasible=feas)
                    for tag, M, feas in plan.candidates])


def cmd_plan(cfg, args):
    if not 0.0 < args.epsilon < 1.0:
        raise ConfigError("--epsilon must lie in (0, 1), got %r"
                          % (args.epsilon,))
    profile = planner.brownian_profile(d=cfg.d, s=cfg.s, alpha=cfg.alpha,
                                       calibration=cfg.calibration)
    plan = planner.plan(profile, args.epsilon, regime=args.regime)
    artifacts.write_json(os.path.join(cfg.out_dir, "plan.json"),
                         _plan_payload(plan), cfg)
    print("regime: %s (case %d)" % (plan.case_tag,
                                    _CASE_NUMBERS[plan.case_tag]))
    print("epsilon: %s  L: %d  M: %d  (binding: %s)"
          % (fmt_eps(plan.epsilon), plan.L_eps, plan.M_eps,
             plan.binding.get("M", "-")))
    if plan.feasible:
        print("h: %s  interval: [%s, %s]"
              % (artifacts.fmt(plan.h_eps), artifacts.fmt(plan.h_interval[0]),
                 artifacts.fmt(plan.h_interval[1])))
        print("p0(planned): %s" % (artifacts.fmt(plan.p0_planned),))
    thr = " ".join("%s=%d" % kv for kv in sorted(plan.thresholds.items()))
    if thr:
        print("thresholds: %s" % (thr,))
    print("feasible: %s  (%s)" % (plan.feasible, plan.reason))
    if not plan.feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


def fmt_eps(x):
    return artifacts.fmt(float(x))


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        return args.handler(cfg, args)
    except ConfigError as exc:
        print("config error: %s" % (exc,), file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print("config error: %s" % (exc,), file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print("numeric error: %s" % (exc,), file=sys.stderr)
        return EXIT_NUMERIC
    except InfeasiblePlanError as exc:
        print("infeasible plan: %s" % (exc,), file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
