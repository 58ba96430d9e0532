"""Command-line front end: ``dynvhc {analyze,design,run,portrait}``.

Exit codes: 0 success, 1 check or design failure, 2 parse error, 3 runtime
abort of a simulation.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .dynamic_vhc import DynamicVhc, certify_regularity_interval, extend
from .exceptions import DynVhcError, FingerprintError, SimulationAborted, StabilizabilityError
from .orbits import parameterize
from .riccati import PeriodicGain, PeriodicWeights, solve_periodic_riccati
from .scenario import Scenario, ScenarioError, load_scenario
from .transverse import (TransverseLTV, monodromy, stabilizability_gramian,
                         transverse_linearize_vhc)
from .vhc import check_regularity, phase_portrait, reduce, write_portrait_csv

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_ABORT = 0, 1, 2, 3


def _complex_list(z):
    return [[float(np.real(x)), float(np.imag(x))] for x in np.ravel(z)]


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _gramian_dict(g):
    return {"lambda_min": g.lambda_min, "lambda_max": g.lambda_max,
            "controllable": g.controllable, "stabilizable": g.stabilizable,
            "marginal": g.marginal,
            "uncontrolled_multipliers": _complex_list(g.uncontrolled_multipliers)}


def _constant_ltv(sc):
    a, b = sc.ltv["A"], sc.ltv["B"]
    return TransverseLTV.from_functions(lambda t: a, lambda t: b, sc.ltv["period"],
                                        sc.ltv["grid"])


# -- analyze ------------------------------------------------------------------


def analyze(sc):
    """Run every design check; returns ``(report, failed_check_or_None)``."""
    report = {"scenario_kind": sc.kind, "checks": {}}
    checks = report["checks"]

    def fail(name, exc):
        checks[name] = False
        report["error"] = "%s: %s" % (name, exc)
        return report, name

    if sc.kind == "ltv":
        ltv = _constant_ltv(sc)
    else:
        stab = sc.stabilizer()
        mech, vhc = stab._build_system()
        verdict = check_regularity(mech, vhc)
        report["regularity"] = {"regular": verdict.regular, "min_value": verdict.min_value,
                                "theta_min": verdict.theta_min}
        checks["regularity"] = verdict.regular
        if not verdict.regular:
            return fail("regularity", "B_perp D sigma' vanishes at theta=%.6g"
                        % verdict.theta_min)
        rd = reduce(mech, vhc)
        report["lagrangian"] = {"lagrangian": rd.lagrangian_flag,
                                "mass_residual": rd.mass_residual,
                                "potential_residual": rd.potential_residual}
        checks["lagrangian"] = rd.lagrangian_flag
        if not rd.lagrangian_flag:
            return fail("lagrangian", "reduced dynamics are not Lagrangian")
        try:
            orbit = parameterize(rd, sc.energy_level, sc.direction)
        except DynVhcError as exc:
            return fail("classification", exc)
        checks["classification"] = True
        report["orbit"] = {"kind": orbit.kind.value, "energy_level": orbit.energy_level,
                           "period": orbit.period, "direction": orbit.direction,
                           "energy_residual": orbit.energy_residual()}
        try:
            dvhc = certify_regularity_interval(mech, DynamicVhc(vhc, sc.translation),
                                               sc.s_range)
        except DynVhcError as exc:
            return fail("dynamic_regularity", exc)
        checks["dynamic_regularity"] = True
        report["regularity_interval"] = list(dvhc.valid_interval)
        try:
            ltv = transverse_linearize_vhc(extend(mech, dvhc, rd), orbit, grid=sc.ltv_grid)
        except DynVhcError as exc:
            return fail("transversality", exc)
        checks["transversality"] = True
    _, mult = monodromy(ltv)
    report["open_loop_multipliers"] = _complex_list(mult)
    gram = stabilizability_gramian(ltv)
    report["gramian"] = _gramian_dict(gram)
    checks["stabilizable"] = gram.stabilizable
    if gram.marginal:
        print("warning: Gramian near rank-deficient (lambda_min/lambda_max = %.3g)"
              % (gram.lambda_min / gram.lambda_max), file=sys.stderr)
    if not gram.stabilizable:
        return fail("stabilizable", "Gramian eigenvalues %.3g..%.3g, uncontrolled "
                    "multipliers %s" % (gram.lambda_min, gram.lambda_max,
                                        np.abs(gram.uncontrolled_multipliers)))
    return report, None


def cmd_analyze(sc, args):
    report, failed = analyze(sc)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "analysis.json"), report)
    for name, ok in report["checks"].items():
        print("%-20s %s" % (name, "ok" if ok else "FAILED"))
    if "orbit" in report:
        o = report["orbit"]
        print("orbit: %s at E0=%.6g, period %.6g" % (o["kind"], o["energy_level"], o["period"]))
    if "open_loop_multipliers" in report:
        print("open-loop |mu|: %s" % " ".join(
            "%.6g" % abs(complex(*z)) for z in report["open_loop_multipliers"]))
    if failed:
        print("check failed: %s" % report["error"], file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# -- design -------------------------------------------------------------------


def design(sc, steps=None):
    """Gain for the scenario, with fingerprint and weights in its metadata."""
    weights = PeriodicWeights(sc.Q, np.atleast_2d(sc.R))
    if steps is not None:
        sc.riccati_steps = int(steps)
    if sc.kind == "ltv":
        gain = solve_periodic_riccati(_constant_ltv(sc), weights, steps=sc.riccati_steps)
    else:
        gain = sc.stabilizer().fit().gain_
    meta = {"fingerprint": sc.fingerprint(), "kind": sc.kind, "Q": sc.Q.tolist(),
            "R": sc.R, "period": gain.period, "riccati_steps": sc.riccati_steps,
            "version": __version__}
    if sc.kind == "mechanical":
        meta.update(system=sc.system, energy_level=sc.energy_level,
                    translation=list(sc.translation), direction=sc.direction)
    return replace(gain, metadata=meta)


def cmd_design(sc, args):
    try:
        gain = design(sc, args.steps)
    except DynVhcError as exc:
        print("design failed: %s" % exc, file=sys.stderr)
        if isinstance(exc, StabilizabilityError):
            report, _ = analyze(sc)
            if "gramian" in report:
                print("gramian: %s" % json.dumps(report["gramian"]), file=sys.stderr)
        return EXIT_FAIL
    os.makedirs(args.out, exist_ok=True)
    path = args.gain or os.path.join(args.out, "gain.json")
    gain.save(path)
    gain.to_csv(os.path.join(args.out, "gain.csv"))
    with open(os.path.join(args.out, "multipliers.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re", "im", "abs"])
        for z in gain.closed_loop_multipliers:
            w.writerow(["%.12g" % z.real, "%.12g" % z.imag, "%.12g" % abs(z)])
    print("gain written to %s" % path)
    print("closed-loop |mu|: %s" % " ".join("%.6g" % abs(z)
                                            for z in gain.closed_loop_multipliers))
    if not gain.stable:
        print("closed loop is not stable", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# -- run ----------------------------------------------------------------------


def load_gain(path, sc):
    """Read a gain file and check it was designed for ``sc``."""
    gain = PeriodicGain.load(path)
    have = gain.metadata.get("fingerprint")
    want = sc.fingerprint()
    if have != want:
        raise FingerprintError("gain file %s was designed for a different scenario "
                               "(fingerprint %s, expected %s)" % (path, have, want))
    return gain


def _write_diagnostics(path, tr, e0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "theta", "theta_dot", "E_minus_E0", "s", "sd", "e_norm",
                    "edot_norm", "dist_gammabar"])
        for k in range(tr.t.size):
            row = [tr.t[k], tr.theta[k], tr.theta_dot[k], tr.energy[k] - e0, tr.s[k],
                   tr.sdot[k], np.linalg.norm(tr.e[k]), np.linalg.norm(tr.edot[k]),
                   tr.dist_gammabar[k]]
            w.writerow(["%.12g" % x for x in row])


def simulate_one(raw, gain_dict, name, state, out_dir, t_final=None, stab=None):
    """Fit with a given gain, simulate one initial condition and write its CSVs.

    Module-level so worker processes can rebuild everything from plain data.
    Returns a summary dict; aborted runs keep their partial trajectory.
    """
    sc = Scenario.from_dict(raw)
    if stab is None:
        stab = sc.stabilizer().fit(gain=PeriodicGain.from_dict(gain_dict))
    t_final = sc.t_final if t_final is None else t_final
    summary = {"name": name, "aborted": False}
    try:
        tr = stab.simulate(np.asarray(state, dtype=float), t_final, sc.step,
                           record_every=sc.record_every)
    except SimulationAborted as exc:
        tr = exc.trajectory
        summary.update(aborted=True, abort_time=exc.time, reason=str(exc.cause or exc))
    e0 = stab.orbit_.energy_level
    tr.to_csv(os.path.join(out_dir, "%s_trajectory.csv" % name))
    _write_diagnostics(os.path.join(out_dir, "%s_diagnostics.csv" % name), tr, e0)
    if tr.t.size:
        summary.update(t=float(tr.t[-1]), energy_error=float(abs(tr.energy[-1] - e0)),
                       s=float(abs(tr.s[-1])), sdot=float(abs(tr.sdot[-1])),
                       e=float(np.linalg.norm(tr.e[-1])))
    return summary


def cmd_run(sc, args):
    stab = sc.stabilizer()
    gain_path = args.gain or os.path.join(args.out, "gain.json")
    try:
        gain = load_gain(gain_path, sc)
    except FingerprintError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ValueError, KeyError) as exc:
        print("cannot read gain file %s: %s" % (gain_path, exc), file=sys.stderr)
        return EXIT_PARSE
    try:
        stab.fit(gain=gain)
        states = sc.initial_states(stab, args.seed)
    except DynVhcError as exc:
        print("setup failed: %s" % exc, file=sys.stderr)
        return EXIT_FAIL
    os.makedirs(args.out, exist_ok=True)
    t_final = args.steps * sc.step if args.steps else None
    workers = args.workers or min(len(states), os.cpu_count() or 1)
    if workers > 1 and len(states) > 1:
        gd = gain.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(simulate_one, sc.raw, gd, name, st.as_vector(), args.out,
                                   t_final) for name, st in states]
            summaries = [f.result() for f in futures]
    else:
        summaries = [simulate_one(sc.raw, None, name, st.as_vector(), args.out, t_final, stab)
                     for name, st in states]
    _write_json(os.path.join(args.out, "run_summary.json"), summaries)
    code = EXIT_OK
    for s in summaries:
        if s["aborted"]:
            print("%s: aborted at t=%.6g (%s)" % (s["name"], s["abort_time"], s["reason"]),
                  file=sys.stderr)
            code = EXIT_ABORT
        if "t" in s:
            print("%s: t=%.6g |E-E0|=%.3e |s|=%.3e |e|=%.3e"
                  % (s["name"], s["t"], s["energy_error"], s["s"], s["e"]))
    return code


# -- portrait -----------------------------------------------------------------


def cmd_portrait(sc, args):
    stab = sc.stabilizer()
    mech, vhc = stab._build_system()
    verdict = check_regularity(mech, vhc)
    if not verdict.regular:
        print("constraint not regular at theta=%.6g" % verdict.theta_min, file=sys.stderr)
        return EXIT_FAIL
    rd = reduce(mech, vhc)
    if not rd.lagrangian_flag:
        print("reduced dynamics are not Lagrangian", file=sys.stderr)
        return EXIT_FAIL
    os.makedirs(args.out, exist_ok=True)
    points = args.steps or 512
    path = os.path.join(args.out, "portrait.csv")
    write_portrait_csv(path, phase_portrait(rd, sc.portrait_levels, points))
    print("portrait written to %s (%d levels)" % (path, len(sc.portrait_levels)))
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "design": cmd_design, "run": cmd_run,
            "portrait": cmd_portrait}


def build_parser():
    p = argparse.ArgumentParser(prog="dynvhc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version="%(prog)s " + __version__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, help="TOML scenario file")
    p.add_argument("--gain", help="gain file to write (design) or read (run)")
    p.add_argument("--out", help="output directory (default: the scenario's output.dir)")
    p.add_argument("--steps", type=int,
                   help="integration steps (run), Riccati steps (design) or samples (portrait)")
    p.add_argument("--seed", type=int, default=None, help="seed for random_batch perturbations")
    p.add_argument("--workers", type=int, default=None, help="worker processes for batches")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.steps is not None and args.steps <= 0:
        print("--steps must be positive", file=sys.stderr)
        return EXIT_PARSE
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        print("scenario error: %s" % exc, file=sys.stderr)
        return EXIT_PARSE
    if args.out is None:
        args.out = sc.output_dir
    try:
        return COMMANDS[args.command](sc, args)
    except ScenarioError as exc:
        print("scenario error: %s" % exc, file=sys.stderr)
        return EXIT_PARSE
    except DynVhcError as exc:
        print("%s failed: %s" % (args.command, exc), file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
