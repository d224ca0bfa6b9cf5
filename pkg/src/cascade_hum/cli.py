"""
Command-line front end.

    cascade-hum <subcommand> --config FILE --out DIR [--seed S] [--threads T]
                [--dt DT] [--modes N]

Every run writes ``manifest.json`` (config hash, seed, versions, timestamp)
plus deterministic result files.  Exit status: 0 success, 2 invalid input,
3 numerical failure (the report is still written).
"""

import argparse
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, _accel
from .cascade import CascadeConfig, CascadeState, canonical_levels, parse_length
from .compat import build_bump, check_compat_1d, verify_Hk_stability
from .descriptors import from_json as coefficient_from_json
from .energy import estimate_constants, ledger, observability_ratio
from .errors import CascadeError, InvalidConfig, NotControllable
from .evolution import integrate_forward, write_snapshot
from .hum import (_initial_from_modes, controlled_run, dense_gramian, problem_from_json,
                  solve_hum)
from .observation import ObservationSpec, admissibility_integral, observe
from .scenarios import SimultaneousSystem, insensitizing_pipeline, solve_simultaneous

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(Exception):
    pass


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o)}")


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def _versions():
    import scipy

    try:
        import numba
        numba_version = numba.__version__
    except ImportError:
        numba_version = None
    return {"cascade_hum": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba_version, "accelerated": _accel.USE_NUMBA,
            "python": sys.version.split()[0]}


def _apply_overrides(doc, args, system_key="system"):
    target = doc.get(system_key, doc) if system_key else doc
    if args.modes is not None:
        target["N"] = args.modes
    if args.dt is not None:
        doc["dt"] = args.dt
    if args.seed is not None:
        doc["seed"] = args.seed
    return doc


def _initial(cfg, doc):
    if "initial" in doc:
        return CascadeState.from_json(doc["initial"])
    return _initial_from_modes(cfg, doc)


def cmd_simulate(doc, out):
    cfg = CascadeConfig.from_json(doc["system"])
    U0 = _initial(cfg, doc)
    traj = integrate_forward(cfg, U0, parse_length(doc["T"]), float(doc["dt"]),
                             transposed=bool(doc.get("transposed", False)),
                             scheme=doc.get("scheme", "impulse"))
    led = ledger(traj, doc.get("levels"), cfg)
    led.write_csv(os.path.join(out, "ledger.csv"))
    if doc.get("snapshot", False):
        write_snapshot(traj, os.path.join(out, "trajectory.bin"))
    final = {f"e{k}_u{i}": float(s[-1]) for (i, k), s in sorted(led.series.items())}
    write_json(os.path.join(out, "result.json"), {"steps": traj.M, "dt": traj.dt, "final": final,
                                                   "cfg_hash": led.cfg_hash})


def _observation(cfg, doc):
    if "observation" in doc:
        return ObservationSpec.from_json(doc["observation"])
    if cfg.observations:
        return cfg.observations[0]
    raise InvalidConfig("no observation given (use 'observation' or system.observations)")


def cmd_observe(doc, out):
    cfg = CascadeConfig.from_json(doc["system"])
    obs = _observation(cfg, doc)
    obs.validate(cfg.L)
    U0 = _initial(cfg, doc)
    T, dt = parse_length(doc["T"]), float(doc["dt"])
    traj = integrate_forward(cfg, U0, T, dt)
    y = observe(traj, obs)
    with open(os.path.join(out, "observation.csv"), "w") as fh:
        fh.write(",".join(["t"] + [f"g{j}" for j in range(y.shape[1])]) + "\n")
        for t, row in zip(traj.times, y):
            fh.write(",".join(repr(float(x)) for x in (t, *row)) + "\n")
    res = {"admissibility_integral": admissibility_integral(traj, obs)}
    if np.any(U0.u) or np.any(U0.v):
        res["observability_ratio"] = observability_ratio(cfg, U0, T, dt, obs)
    write_json(os.path.join(out, "result.json"), res)


def cmd_sweep(doc, out):
    cfg = CascadeConfig.from_json(doc["system"])
    obs = _observation(cfg, doc)
    rep = estimate_constants(cfg, obs, [parse_length(t) for t in doc["T_grid"]],
                             int(doc.get("samples", 100)), int(doc.get("seed", 0)),
                             dt=doc.get("dt"), min_time=doc.get("min_time"))
    write_json(os.path.join(out, "report.json"), rep.to_json())
    rep.write_csv(os.path.join(out, "report.csv"))


def cmd_hum(doc, out):
    problem = problem_from_json(doc)
    try:
        sol = solve_hum(problem, tol=float(doc.get("tol", 1e-8)), max_iter=doc.get("max_iter"),
                        method=doc.get("method", "auto"))
    except NotControllable as exc:
        if exc.solution is not None:
            write_json(os.path.join(out, "solution.json"),
                       {**exc.solution.to_json(), "error": str(exc)})
        else:
            write_json(os.path.join(out, "solution.json"), {"success": False, "error": str(exc)})
        raise NumericalFailure(str(exc)) from None
    write_json(os.path.join(out, "solution.json"), sol.to_json())
    sol.write_controls(out)
    run = controlled_run(problem, sol.controls)
    canon = canonical_levels(problem.cfg.n, problem.cfg.m)
    ledger(run, [[k, c] for k, c in zip(problem.levels, canon)],
           problem.cfg).write_csv(os.path.join(out, "ledger.csv"))
    if not sol.success:
        raise NumericalFailure(f"terminal residual {sol.relative_residual:.3e} above tolerance")


def cmd_gramian(doc, out):
    problem = problem_from_json(doc)
    dg = dense_gramian(problem)
    np.savetxt(os.path.join(out, "gramian.csv"), dg.matrix, delimiter=",", fmt="%.17g")
    res = {"dimension": int(dg.matrix.shape[0]), "eig_min": dg.eig_min, "eig_max": dg.eig_max,
           "scaled_eig_min": float(dg.scaled_eigenvalues[0]),
           "scaled_eig_max": float(dg.scaled_eigenvalues[-1]),
           "symmetry_error": dg.symmetry_error,
           "positive_definite": bool(dg.scaled_eigenvalues[0] > 0)}
    write_json(os.path.join(out, "gramian.json"), res)
    if not res["positive_definite"]:
        raise NumericalFailure("Gramian is not positive definite at this horizon")


def cmd_check_coeff(doc, out):
    L = parse_length(doc["L"])
    if "coefficient" in doc:
        c = coefficient_from_json(doc["coefficient"])
    elif "bump" in doc:
        spec = doc["bump"]
        c = build_bump(spec["region"], L, spec.get("amplitude", 1.0), delta=spec.get("delta"))
    else:
        raise InvalidConfig("check-coeff needs 'coefficient' or 'bump'")
    k = int(doc.get("k", 3))
    comp = check_compat_1d(c, k, L)
    stab = verify_Hk_stability(c, k, doc.get("N_list", [16, 32, 64]), L,
                               seed=int(doc.get("seed", 0)))
    write_json(os.path.join(out, "compat.json"), {"coefficient": c.to_json(),
                                                  "compat": comp.to_json(),
                                                  "stability": stab.to_json()})


def cmd_simultaneous(doc, out):
    L, N = parse_length(doc["L"]), int(doc["N"])
    init = doc.get("initial", {})
    pos = np.zeros((3, N)) if "positions" not in init else np.asarray(init["positions"], dtype=float)
    vel = np.zeros((3, N)) if "velocities" not in init else np.asarray(init["velocities"], dtype=float)
    for e in doc.get("initial_modes", []):
        i, k = int(e["component"]) - 1, int(e["mode"]) - 1
        pos[i, k] += float(e.get("position", 0.0))
        vel[i, k] += float(e.get("velocity", 0.0))
    sys_ = SimultaneousSystem(coefficient_from_json(doc["alpha"]), coefficient_from_json(doc["beta"]),
                              L, N, pos, vel, tuple(doc["alpha_region"]), tuple(doc["beta_region"]))
    ctrl = ObservationSpec.interior(coefficient_from_json(doc["control"]["coefficient"]),
                                    doc["control"]["region"], 3)
    try:
        res = solve_simultaneous(sys_, parse_length(doc["T"]), float(doc["dt"]), ctrl,
                                 tol=float(doc.get("tol", 1e-8)))
    except NotControllable as exc:
        write_json(os.path.join(out, "result.json"), {"success": False, "error": str(exc)})
        raise NumericalFailure(str(exc)) from None
    write_json(os.path.join(out, "result.json"), res.to_json())
    np.savetxt(os.path.join(out, "h.csv"), np.column_stack([res.hum.times, res.h]), delimiter=",",
               fmt="%.17g", header="t," + ",".join(f"h{k + 1}" for k in range(N)), comments="")
    if res.relative > 1e-3:
        raise NumericalFailure(f"parallel terminal energy {res.relative:.3e} of initial")


def cmd_insensitize(doc, out):
    L, N = parse_length(doc["L"]), int(doc["N"])
    y0 = np.zeros(N); y1 = np.zeros(N)
    y0[: len(doc.get("y0", []))] = doc.get("y0", [])
    y1[: len(doc.get("y1", []))] = doc.get("y1", [])
    res = insensitizing_pipeline(
        y0, y1, coefficient_from_json(doc["b"]), tuple(doc["omega"]),
        coefficient_from_json(doc["c"]), tuple(doc["region"]), parse_length(doc["T"]),
        float(doc["dt"]), N=N, L=L, eps=float(doc.get("eps", 1e-4)),
        directions=int(doc.get("directions", 5)), seed=int(doc.get("seed", 0)),
    )
    write_json(os.path.join(out, "result.json"), res.to_json())
    if res.worst("controlled") > 1e-4:
        raise NumericalFailure("sensitivity above 1e-4 after control")


COMMANDS = {
    "simulate": (cmd_simulate, "system"),
    "observe": (cmd_observe, "system"),
    "sweep-T": (cmd_sweep, "system"),
    "hum": (cmd_hum, "system"),
    "gramian": (cmd_gramian, "system"),
    "check-coeff": (cmd_check_coeff, None),
    "simultaneous": (cmd_simultaneous, None),
    "insensitize": (cmd_insensitize, None),
}


def build_parser():
    ap = argparse.ArgumentParser(prog="cascade-hum", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--modes", type=int, default=None, help="override truncation N")
    return ap


def run(argv=None):
    args = build_parser().parse_args(argv)
    handler, system_key = COMMANDS[args.command]
    os.makedirs(args.out, exist_ok=True)
    manifest = {"command": args.command, "config": os.path.abspath(args.config),
                "seed": args.seed, "threads": args.threads, "dt_override": args.dt,
                "modes_override": args.modes, "versions": _versions(),
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat()}
    status, message = EXIT_OK, "ok"
    try:
        with open(args.config, "rb") as fh:
            raw = fh.read()
        manifest["inputs_sha256"] = hashlib.sha256(raw).hexdigest()
        try:
            doc = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise InvalidConfig(f"malformed JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InvalidConfig("config must be a JSON object")
        if system_key and system_key not in doc:
            raise InvalidConfig(f"config needs a '{system_key}' object")
        _apply_overrides(doc, args, system_key)
        _accel.set_threads(args.threads)
        handler(doc, args.out)
    except NumericalFailure as exc:
        status, message = EXIT_NUMERIC, str(exc)
    except NotControllable as exc:
        status, message = EXIT_NUMERIC, str(exc)
    except (CascadeError, KeyError, TypeError, ValueError, OSError) as exc:
        status, message = EXIT_INPUT, f"{type(exc).__name__}: {exc}"
    manifest["status"] = status
    manifest["message"] = message
    write_json(os.path.join(args.out, "manifest.json"), manifest)
    if status != EXIT_OK:
        print(f"cascade-hum {args.command}: {message}", file=sys.stderr)
    return status


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
