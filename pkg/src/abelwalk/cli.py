"""Command-line entry point.

    abelwalk COMMAND [--config PATH] [--preset NAME] [--seed N] [--out DIR] [--threads N]

Commands: simulate, converge, ldtail, aperiodic-check, certify, counterexample.
Each writes ``<command>.csv`` (or ``.json``) and ``<command>-manifest.json``
into the output directory.  Every file embeds the resolved config and seed.
Exit codes: 0 ok; 1 a hypothesis or reproduction check failed (aperiodic-check:
1 = not aperiodic, 2 = undecided); 64 bad config; 65 cap or resolution limit.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback

import numpy as np

from . import __version__
from .aperiodicity import (
    APERIODIC,
    NOT_APERIODIC,
    UNDECIDED,
    CapExceeded,
    HypothesisError,
    is_strictly_aperiodic,
)
from .config import (
    GOLDEN,
    PRESETS,
    ConfigError,
    build_family,
    build_group,
    build_initial,
    build_irrational,
    build_observable,
    build_schedule,
    build_start,
    load_config,
    resolved_run,
)
from .counterexamples import dirac_rotation, shrinking_family, shrinking_support
from .groups import GroupMismatch, Torus
from .measures import AtomCapExceeded, total_variation, uniform
from .partition import contraction_certificate
from .walk import (
    TailBelowResolution,
    distribution_pushforward,
    haar_integral,
    ld_tail_estimate,
    run_trials,
)
from .wasserstein import w1_circle_to_haar, w1_haar_upper_bound_torus, w1_to_haar

EXIT_OK = 0
EXIT_HYPOTHESIS = 1
EXIT_UNDECIDED = 2
EXIT_CONFIG = 64
EXIT_RESOLUTION = 65

COMMANDS = ("simulate", "converge", "ldtail", "aperiodic-check", "certify", "counterexample")
STOCHASTIC = ("simulate", "ldtail")

_MODULE_LABELS = {
    "groups": "group_core",
    "measures": "measures",
    "transport": "wasserstein",
    "wasserstein": "wasserstein",
    "aperiodicity": "aperiodicity",
    "partition": "partition_cert",
    "walk": "walk_sim",
    "rng": "walk_sim",
    "config": "cli_runner",
    "cli": "cli_runner",
    "counterexamples": "cli_runner",
}


class Failure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class Run:
    """Resolved config plus output bookkeeping for one command."""

    def __init__(self, command: str, cfg: dict, out_dir: str, threads: int):
        self.command = command
        self.cfg = cfg
        self.out_dir = out_dir
        self.threads = threads
        self.outputs: dict[str, str] = {}
        os.makedirs(out_dir, exist_ok=True)

    @property
    def seed(self):
        return self.cfg.get("seed")

    @property
    def run(self) -> dict:
        return self.cfg["run"]

    def _header(self) -> list[str]:
        return ["# config: " + json.dumps(self.cfg, sort_keys=True, separators=(",", ":")),
                f"# seed: {self.seed}"]

    def _write(self, name: str, text: str):
        path = os.path.join(self.out_dir, name)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        self.outputs[name] = hashlib.sha256(text.encode()).hexdigest()

    def write_csv(self, name: str, columns: list[str], rows: list[list]):
        lines = self._header() + [",".join(columns)]
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        self._write(name, "\n".join(lines) + "\n")

    def write_json(self, name: str, payload: dict):
        body = {"config": self.cfg, "seed": self.seed, **payload}
        self._write(name, json.dumps(_jsonable(body), sort_keys=True, indent=2) + "\n")

    def manifest(self, exit_code: int, summary: dict):
        body = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg,
            "seed": self.seed,
            "exit_code": exit_code,
            "outputs": dict(sorted(self.outputs.items())),
            "summary": summary,
        }
        path = os.path.join(self.out_dir, f"{self.command}-manifest.json")
        with open(path, "w", newline="\n") as fh:
            fh.write(json.dumps(_jsonable(body), sort_keys=True, indent=2) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


# -- commands ---------------------------------------------------------------

def cmd_simulate(r: Run) -> tuple[int, dict]:
    g = build_group(r.cfg)
    sched = build_schedule(r.cfg, build_family(r.cfg, g), r.seed)
    phi = build_observable(r.cfg, g)
    x0 = build_start(r.cfg, g)
    n, trials, tol = r.run["n"], r.run["trials"], r.run["tolerance"]
    reports = run_trials(x0, sched, phi, n, r.seed, trials, r.threads)
    r.write_csv("simulate.csv", ["n", "trial", "deviation", "birkhoff"],
                [[t.n, t.trial, t.deviation, t.birkhoff] for t in reports])
    dev = np.array([t.deviation for t in reports])
    within = int(np.count_nonzero(dev < tol))
    q95 = float(np.quantile(dev, 0.95))
    summary = {"n": n, "trials": trials, "haar_integral": haar_integral(phi), "tolerance": tol,
               "within_tolerance": within, "deviation_q95": q95, "passed": q95 < tol}
    print(f"simulate: n = {n}, {within}/{trials} trials with deviation < {tol}; "
          f"95th percentile {q95:.4g}")
    return EXIT_OK, summary


def cmd_converge(r: Run) -> tuple[int, dict]:
    g = build_group(r.cfg)
    exact = r.run["exact"]
    sched = build_schedule(r.cfg, build_family(r.cfg, g, exact), r.seed)
    nu0 = build_initial(r.cfg, g, exact)
    steps = r.run["n"]
    laws = [nu0] + distribution_pushforward(sched, nu0, steps, r.run["atom_cap"])
    rows = []
    if g.finite:
        h = uniform(g)
        for k, nu in enumerate(laws):
            nu = nu if not nu.exact else nu.scaled(1.0)
            rows.append([k, w1_to_haar(nu), total_variation(nu, h), "exact"])
    elif isinstance(g, Torus) and g.dimension == 1:
        rows = [[k, w1_circle_to_haar(nu), 1.0, "exact"] for k, nu in enumerate(laws)]
    else:
        rows = [[k, w1_haar_upper_bound_torus(nu, r.run["grid_n"]), 1.0, "upper_bound"]
                for k, nu in enumerate(laws)]
    r.write_csv("converge.csv", ["n", "w1_to_haar", "total_variation", "kind"], rows)
    w = [row[1] for row in rows]
    nonincreasing = all(b <= a + 1e-10 for a, b in zip(w, w[1:]))
    summary = {"steps": steps, "final_w1": w[-1], "nonincreasing": nonincreasing}
    print(f"converge: W1 to Haar {w[0]:.6g} -> {w[-1]:.6g} over {steps} steps; "
          f"nonincreasing = {nonincreasing}")
    return EXIT_OK, summary


def cmd_ldtail(r: Run) -> tuple[int, dict]:
    g = build_group(r.cfg)
    sched = build_schedule(r.cfg, build_family(r.cfg, g), r.seed)
    phi = build_observable(r.cfg, g)
    x0 = build_start(r.cfg, g)
    eps, grid, trials = r.run["epsilon"], r.run["n_grid"], r.run["ld_trials"]
    try:
        est = ld_tail_estimate(sched, phi, x0, eps, grid, trials, r.seed, r.threads)
        rows, fit = est.rows, est.fit
    except TailBelowResolution as exc:
        rows, fit = exc.rows, None
    r.write_csv("ldtail.csv", ["n", "p_hat", "ci_lo", "ci_hi", "hits", "trials"],
                [[t.n, t.p_hat, t.ci_lo, t.ci_hi, t.hits, t.trials] for t in rows])
    for t in rows:
        print(f"ldtail: n = {t.n:6d}  p_hat = {t.p_hat:.5f}  95% CI [{t.ci_lo:.5f}, {t.ci_hi:.5f}]")
    if fit is None:
        summary = {"fit": None, "message": "tail below resolution; increase trials or lower eps"}
        raise Failure(EXIT_RESOLUTION, "[walk_sim] " + summary["message"])
    summary = {"fit": {"slope": fit.slope, "slope_se": fit.slope_se, "intercept": fit.intercept,
                       "intercept_se": fit.intercept_se, "points": fit.points, "note": fit.note,
                       "rate": fit.rate}}
    print(f"ldtail: log p_hat ~ {fit.intercept:.4g} + ({fit.slope:.4g} +- {fit.slope_se:.2g}) n"
          + (f"  [{fit.note}]" if fit.note else ""))
    return EXIT_OK, summary


def _family_or_scenario(r: Run, g):
    if "family" in r.cfg:
        return build_family(r.cfg, g)
    if r.cfg.get("scenario") == "shrinking-support":
        return shrinking_family(r.cfg.get("alpha", GOLDEN), r.run["n"])
    raise ConfigError("config has no 'family'")


def cmd_aperiodic_check(r: Run) -> tuple[int, dict]:
    g = build_group(r.cfg)
    flags = build_irrational(r.cfg, g)
    verdicts = []
    for i, mu in enumerate(_family_or_scenario(r, g)):
        v = is_strictly_aperiodic(mu, flags)
        w = v.witness
        verdicts.append({
            "member": i,
            "verdict": v.verdict,
            "method": v.method,
            "reason": v.reason,
            "witness": None if w is None else {
                "offset": list(w.offset),
                "generators": [list(x) for x in w.generators],
                "subgroup": None if w.subgroup is None else sorted(list(x) for x in w.subgroup),
                "description": w.description,
            },
        })
        line = f"aperiodic-check: member {i}: {v.verdict} ({v.method})"
        if w is not None:
            line += f"; witness: {w.description}, offset {w.offset}"
        elif v.reason:
            line += f"; {v.reason}"
        print(line)
    kinds = {v["verdict"] for v in verdicts}
    code = (EXIT_HYPOTHESIS if NOT_APERIODIC in kinds
            else EXIT_UNDECIDED if UNDECIDED in kinds else EXIT_OK)
    overall = {EXIT_OK: APERIODIC, EXIT_HYPOTHESIS: NOT_APERIODIC, EXIT_UNDECIDED: UNDECIDED}[code]
    r.write_json("aperiodic-check.json", {"verdict": overall, "members": verdicts})
    return code, {"verdict": overall, "members": len(verdicts)}


def cmd_certify(r: Run) -> tuple[int, dict]:
    g = build_group(r.cfg)
    if not g.finite:
        raise GroupMismatch("certify needs a finite group")
    exact = r.run["exact"]
    family = build_family(r.cfg, g, exact)
    bad = [i for i, mu in enumerate(family) if is_strictly_aperiodic(mu).verdict != APERIODIC]
    if bad:
        raise HypothesisError(f"non-aperiodic family detected: members {bad} are not strictly aperiodic")
    sched = build_schedule(r.cfg, family, r.seed)
    nu0 = build_initial(r.cfg, g, exact)
    cert = contraction_certificate(sched, nu0, r.run["epsilon"], m_cap=r.run["m_cap"],
                                   atom_cap=r.run["atom_cap"], max_rounds=r.run["round_cap"])
    report = cert.to_dict()
    r.write_json("certify.json", {"certificate": report})
    print(f"certify: m = {cert.m}, delta = {float(cert.delta):.6g}, r = {cert.r}, "
          f"bound (Diam+1)*eps = {cert.bound:.6g}, computed coupling bound = {cert.coupling_bound:.6g}, "
          f"exact final W1 = {cert.final_w1:.6g}, holds = {cert.holds}")
    summary = {k: report[k] for k in ("m", "r", "delta", "bound", "coupling_bound", "final_w1", "holds")}
    return (EXIT_OK if cert.holds else EXIT_HYPOTHESIS), summary


def cmd_counterexample(r: Run, scenario: str | None) -> tuple[int, dict]:
    scenario = scenario or r.cfg.get("scenario")
    if scenario is None:
        raise ConfigError("counterexample needs a scenario (dirac-rotation or shrinking-support)")
    alpha = r.cfg.get("alpha", GOLDEN)
    n = r.run["n"]
    if scenario == "dirac-rotation":
        rows = dirac_rotation(alpha, n)
        r.write_csv("counterexample.csv", ["n", "position", "w1_to_haar", "expected", "abs_error"],
                    [[x.n, x.position, x.w1, x.expected, abs(x.w1 - x.expected)] for x in rows])
        err = max(abs(x.w1 - x.expected) for x in rows)
        ok = err <= 1e-8
        print(f"counterexample dirac-rotation: W(mu^n, h) = {rows[0].expected} for n = 1..{n}, "
              f"max error {err:.3g}; never converges")
        return (EXIT_OK if ok else EXIT_HYPOTHESIS), {"scenario": scenario, "max_abs_error": err,
                                                      "reproduced": ok}
    if scenario == "shrinking-support":
        eps = r.run["epsilon"]
        rows = shrinking_support(alpha, n, eps)
        r.write_csv("counterexample.csv",
                    ["n", "max_coefficient", "bound", "max_atom", "atom_bound", "below",
                     "enumerated", "float_checked", "dense"],
                    [[x.n, x.max_coefficient, x.bound, x.max_atom, x.atom_bound, x.below,
                      x.enumerated, x.float_checked, x.dense] for x in rows])
        ok = all(x.below for x in rows) and not any(x.dense for x in rows)
        print(f"counterexample shrinking-support: all atoms of mu_n*...*mu_1 lie in [0, alpha(1-2^-n)] "
              f"for n = 1..{n}: {all(x.below for x in rows)}; eps-dense for eps = {eps}: "
              f"{any(x.dense for x in rows)}")
        return (EXIT_OK if ok else EXIT_HYPOTHESIS), {"scenario": scenario, "reproduced": ok}
    raise ConfigError(f"unknown scenario {scenario!r}")


# -- plumbing ---------------------------------------------------------------

def _attribution(exc: BaseException) -> str:
    label = "cli_runner"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("abelwalk."):
            label = _MODULE_LABELS.get(mod.split(".")[1], label)
    return label


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abelwalk", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "counterexample":
            sp.add_argument("scenario", nargs="?", choices=["dirac-rotation", "shrinking-support"])
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--preset", metavar="NAME", help="one of: " + ", ".join(sorted(PRESETS)))
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--threads", type=int, default=1, metavar="N")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    preset = args.preset
    if command == "counterexample" and args.config is None and preset is None:
        preset = args.scenario
    try:
        cfg = load_config(args.config, preset)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if command in STOCHASTIC and cfg.get("seed") is None:
            raise ConfigError(f"{command} needs a seed (config 'seed' or --seed)")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg["run"] = resolved_run(cfg)
        out_dir = args.out or cfg.get("output", {}).get("dir", "out")
        run = Run(command, cfg, out_dir, args.threads)
    except ConfigError as exc:
        print(f"error [cli_runner]: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if command == "counterexample":
            code, summary = cmd_counterexample(run, args.scenario)
        else:
            code, summary = {
                "simulate": cmd_simulate,
                "converge": cmd_converge,
                "ldtail": cmd_ldtail,
                "aperiodic-check": cmd_aperiodic_check,
                "certify": cmd_certify,
            }[command](run)
    except Failure as exc:
        code, summary = exc.code, {"error": str(exc)}
        print(f"error {exc}", file=sys.stderr)
    except (ConfigError, GroupMismatch) as exc:
        code, summary = EXIT_CONFIG, {"error": str(exc)}
        print(f"error [{_attribution(exc)}]: {exc}", file=sys.stderr)
    except (AtomCapExceeded, CapExceeded, TailBelowResolution) as exc:
        code, summary = EXIT_RESOLUTION, {"error": str(exc)}
        print(f"error [{_attribution(exc)}]: {exc}", file=sys.stderr)
    except HypothesisError as exc:
        code, summary = EXIT_HYPOTHESIS, {"error": str(exc)}
        print(f"error [{_attribution(exc)}]: {exc}", file=sys.stderr)
    except ValueError as exc:
        code, summary = EXIT_CONFIG, {"error": str(exc)}
        print(f"error [{_attribution(exc)}]: {exc}", file=sys.stderr)
    run.manifest(code, summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
