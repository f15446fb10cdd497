"""Command-line driver: ``gchmm {simulate, infer, evaluate, predict}``.

Every flag may also come from a JSON ``--config`` file (keys use the long flag
name, dashes or underscores). Precedence is command line, then config, then
built-in default. ``GCHMM_SEED`` supplies the default seed.
"""

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from . import io
from .bgem import BgemConfig, run_bgem
from .data import PersonIndex
from .errors import DomainError, GchmmError, NumericalError, ParseError
from .evaluation import classify, metrics, one_step_accuracy, one_step_ahead
from .gbw import run_gbw
from .gibbs import GibbsConfig, neutral_params, run_gibbs
from .model import BETA_EXP, RECEIVE, SIGMOID, TRANSMIT, InfectionParams, semi_synthetic

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
SEED_ENV = "GCHMM_SEED"

# (flag, type, default, help); a default of None is resolved by the command
_COMMON = [
    ("--config", str, None, "JSON file supplying any flag"),
    ("--seed", int, None, f"random seed (default ${SEED_ENV} or 0)"),
    ("--out", str, None, "output directory (file for evaluate/predict)"),
]
_DATA = [
    ("--contacts", str, None, "contact CSV day,node_i,node_j[,duration_minutes]"),
    ("--symptoms", str, None, "symptom CSV node,day,symptom,value"),
    ("--people", str, None, "index,node table fixing the person order"),
    ("--num-days", int, None, "tracked days T (default: largest day in the inputs)"),
    ("--num-symptoms", int, None, "symptom count S (default: largest symptom id)"),
    ("--duration-threshold", float, 10.0, "minutes of contact per day that make an edge"),
    ("--beta-interp", str, RECEIVE, "receive or transmit"),
]
OPTIONS = {
    "simulate": _COMMON + [
        ("--num-people", int, 84, "person count N"),
        ("--num-days", int, 107, "tracked days T"),
        ("--num-symptoms", int, 6, "symptom count S"),
        ("--num-features", int, 4, "covariates besides the intercept"),
        ("--max-degree", int, 11, "degree cap of the contact network"),
        ("--link", str, SIGMOID, "sigmoid or beta-exp"),
        ("--beta-interp", str, RECEIVE, "receive or transmit"),
        ("--p-miss", float, 0.0, "probability that a symptom report is missing"),
    ],
    "infer": _COMMON + _DATA + [
        ("--method", str, "gbw", "gbw, gibbs or bgem"),
        ("--covariates", str, None, "covariate CSV node,f1,... (bgem)"),
        ("--link", str, SIGMOID, "sigmoid or beta-exp (bgem)"),
        ("--samples", int, None, "Gibbs sweeps (gibbs: 500, bgem: 50 per E-step)"),
        ("--burnin", int, None, "discarded sweeps (default: half)"),
        ("--thin", int, 1, "keep every k-th post-burn-in state draw (gibbs)"),
        ("--em-iters", int, None, "EM iterations (gbw: 15, bgem: 10)"),
        ("--fast-binary", bool, False, "bgem: maximize at averaged binary pseudo-samples"),
        ("--known-params", str, None, "parameter JSON; skips estimation (gbw, gibbs)"),
    ],
    "evaluate": _COMMON + _DATA + [
        ("--truth", str, None, "true states CSV node,day,state"),
        ("--marginals", str, None, "predicted marginals CSV node,day,p_infected"),
        ("--truth-params", str, None, "true parameter JSON"),
        ("--pred-params", str, None, "estimated parameter JSON"),
        ("--threshold", float, 0.5, "classification threshold"),
    ],
    "predict": _COMMON + _DATA + [
        ("--params", str, None, "parameter JSON"),
        ("--day", int, None, "use symptoms through this day, forecast the next (default T-1)"),
    ],
}
REQUIRED = {
    "simulate": ("out",),
    "infer": ("contacts", "symptoms", "out"),
    "evaluate": ("truth", "marginals"),
    "predict": ("contacts", "symptoms", "params", "out"),
}
CHOICES = {"beta_interp": (RECEIVE, TRANSMIT), "link": (SIGMOID, BETA_EXP), "method": ("gbw", "gibbs", "bgem")}


def _dest(flag):
    return flag.lstrip("-").replace("-", "_")


def build_parser():
    parser = argparse.ArgumentParser(prog="gchmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        for flag, typ, default, text in opts:
            if typ is bool:
                p.add_argument(flag, action="store_true", help=text)
            else:
                p.add_argument(flag, type=typ, help=f"{text} (default {default})" if default is not None else text)
    return parser


def resolve(command, given):
    """Merge command-line values over config values over defaults."""
    specs = {_dest(f): (t, d) for f, t, d, _ in OPTIONS[command]}
    cfg = {}
    if "config" in given:
        raw = io.read_json(given["config"])
        if not isinstance(raw, dict):
            raise DomainError("config file must hold a JSON object")
        for key, value in raw.items():
            k = key.replace("-", "_")
            if k not in specs or k == "config":
                raise DomainError(f"unknown config key {key!r} for {command}")
            typ = specs[k][0]
            try:
                cfg[k] = value if value is None else typ(value)
            except (TypeError, ValueError):
                raise DomainError(f"config key {key!r} must be {typ.__name__}") from None
    opts = {k: d for k, (_, d) in specs.items()}
    opts.update(cfg)
    opts.update({k: v for k, v in given.items() if k != "command"})
    if opts.get("seed") is None:
        env = os.environ.get(SEED_ENV)
        try:
            opts["seed"] = int(env) if env else 0
        except ValueError:
            raise DomainError(f"${SEED_ENV} must be an integer") from None
    for k in REQUIRED[command]:
        if opts.get(k) is None:
            raise DomainError(f"{command} needs --{k.replace('_', '-')}")
    for k, allowed in CHOICES.items():
        if k in opts and opts[k] not in allowed:
            raise DomainError(f"--{k.replace('_', '-')} must be one of {', '.join(allowed)}")
    return argparse.Namespace(**opts)


# ---------------------------------------------------------------------------
# Input helpers

def _id_key(pid):
    return (0, int(pid), pid) if pid.lstrip("-").isdigit() else (1, 0, pid)


def _scan(path, id_cols, day_col, extra_col=None):
    """Person ids, largest day and largest ``extra_col`` value in a CSV with optional header."""
    ids, days, extra = set(), [0], [0]
    with open(path, newline="", encoding="utf-8") as fh:
        for k, row in enumerate(csv.reader(fh)):
            row = [c.strip() for c in row]
            if not row or len(row) <= max(id_cols + (day_col,)):
                continue
            try:
                day = int(row[day_col])
                if extra_col is not None:
                    extra.append(int(row[extra_col]))
            except ValueError:
                if k == 0:
                    continue
                raise ParseError("non-integer day or symptom", path, k + 1) from None
            ids.update(row[c] for c in id_cols)
            days.append(day)
    return ids, max(days), max(extra)


def _problem(a, people=None, T=None):
    """People, network and symptoms for commands that read contact/symptom files."""
    s_ids, s_days, s_max = _scan(a.symptoms, (0,), 1, 2)
    c_ids, c_days, _ = _scan(a.contacts, (1, 2), 0)
    if people is None and a.people:
        people = io.read_people(a.people)
    if people is None and getattr(a, "covariates", None):
        people = io.load_covariates(a.covariates)[1]
    if people is None:
        people = PersonIndex(sorted(s_ids | c_ids, key=_id_key))
    T = T or a.num_days or max(s_days, c_days)
    S = a.num_symptoms or s_max
    if T < 1 or S < 1:
        raise DomainError("could not determine the number of days and symptoms")
    G = io.load_network(a.contacts, people, T, a.duration_threshold)
    Y = io.load_symptoms(a.symptoms, people, T, S)
    return people, G, Y


def _params(path, N):
    return InfectionParams.from_json(io.read_json(path), N)


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Commands

def cmd_simulate(a):
    os.makedirs(a.out, exist_ok=True)
    inst = semi_synthetic(a.seed, N=a.num_people, T=a.num_days, S=a.num_symptoms,
                          num_features=a.num_features, max_degree=a.max_degree, p_miss=a.p_miss,
                          interp=a.beta_interp, link=a.link)
    people = PersonIndex.from_count(a.num_people)
    io.write_people(os.path.join(a.out, "people.csv"), people)
    io.write_network(os.path.join(a.out, "contacts.csv"), inst.G, people)
    io.write_symptoms(os.path.join(a.out, "symptoms.csv"), inst.Y, people)
    io.write_covariates(os.path.join(a.out, "covariates.csv"), inst.Z, people)
    io.write_states(os.path.join(a.out, "states.csv"), inst.X, people)
    io.write_json(os.path.join(a.out, "params.json"), inst.params.to_json())
    io.write_json(os.path.join(a.out, "eta.json"), inst.eta.to_json(inst.Z.names))


def _infer_gbw(a, people, G, Y):
    N, S = len(people), Y.shape[2]
    if a.known_params:
        init, known = _params(a.known_params, N), True
    else:
        init, known = neutral_params(N, S), False
    res = run_gbw(Y, G, init, max_iters=15 if a.em_iters is None else a.em_iters,
                  known_params=known, interp=a.beta_interp)
    diag = {"method": "gbw", "iterations": res.iterations, "converged": res.converged,
            "history": res.history}
    return res.marginals, res.params, diag


def _infer_gibbs(a, people, G, Y):
    known = _params(a.known_params, len(people)) if a.known_params else None
    cfg = GibbsConfig(iterations=500 if a.samples is None else a.samples, burnin=a.burnin, thin=a.thin,
                      interp=a.beta_interp, known_params=known)
    res = run_gibbs(Y, G, None, cfg, np.random.default_rng(a.seed))
    _write_jsonl(os.path.join(a.out, "param_draws.jsonl"),
                 ({k: (float(v) if np.ndim(v) == 0 else np.asarray(v).tolist()) for k, v in d.items()}
                  for d in res.param_draws))
    diag = {"method": "gibbs", "iterations": cfg.iterations, "burnin": cfg.burnin, "thin": cfg.thin,
            "kept": len(res.param_draws)}
    return res.posterior_x, res.posterior_params, diag


def _infer_bgem(a, people, G, Y):
    if not a.covariates:
        raise DomainError("bgem needs --covariates")
    Z, _ = io.load_covariates(a.covariates, people)
    J = 50 if a.samples is None else a.samples
    cfg = BgemConfig(J=J, B=J // 2 if a.burnin is None else a.burnin,
                     max_iters=10 if a.em_iters is None else a.em_iters,
                     link=a.link, interp=a.beta_interp, fast=a.fast_binary)
    res = run_bgem(Y, G, Z, cfg, np.random.default_rng(a.seed))
    io.write_json(os.path.join(a.out, "eta.json"), res.link.to_json(Z.names))
    params = InfectionParams(res.gamma, res.alpha, res.beta, res.params.pi, res.params.theta)
    diag = {"method": "bgem", "link": a.link, "fast_binary": a.fast_binary, "iterations": res.iterations,
            "converged": res.converged,
            "trace": [{k: float(v) for k, v in d.items()} for d in res.diagnostics]}
    return res.posterior_x, params, diag


def cmd_infer(a):
    people, G, Y = _problem(a)
    os.makedirs(a.out, exist_ok=True)
    run = {"gbw": _infer_gbw, "gibbs": _infer_gibbs, "bgem": _infer_bgem}[a.method]
    P, params, diag = run(a, people, G, Y)
    io.write_people(os.path.join(a.out, "people.csv"), people)
    io.write_marginals(os.path.join(a.out, "marginals.csv"), P, people)
    io.write_states(os.path.join(a.out, "states.csv"), classify(P), people)
    io.write_json(os.path.join(a.out, "params.json"), params.to_json())
    io.write_json(os.path.join(a.out, "diagnostics.json"), diag)


def cmd_evaluate(a):
    if a.people:
        people = io.read_people(a.people)
    else:
        ids, _, _ = _scan(a.truth, (0,), 1)
        people = PersonIndex(sorted(ids, key=_id_key))
    _, T, _ = _scan(a.truth, (0,), 1)
    truth = io.read_states(a.truth, people, T)
    pred = classify(io.read_marginals(a.marginals, people, T), a.threshold)
    N = len(people)
    tp = _params(a.truth_params, N) if a.truth_params else None
    pp = _params(a.pred_params, N) if a.pred_params else None
    m = metrics(truth, pred, tp, pp)
    if pp is not None and a.contacts and a.symptoms:
        _, G, Y = _problem(a, people, T)
        m.y_onestep_accuracy = one_step_accuracy(Y, G, pp, a.beta_interp)
    text = json.dumps(m.to_json(), indent=2, sort_keys=True) + "\n"
    if a.out:
        with open(a.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_predict(a):
    people, G, Y = _problem(a)
    T = Y.shape[1]
    t = T - 1 if a.day is None else a.day
    P = one_step_ahead(Y, G, _params(a.params, len(people)), t, a.beta_interp)
    fh, w = io._writer(a.out)
    with fh:
        w.writerow(["node", "day", "symptom", "p_symptom"])
        for n, pid in enumerate(people.ids):
            for s in range(P.shape[1]):
                w.writerow([pid, t + 1, s + 1, repr(float(P[n, s]))])


COMMANDS = {"simulate": cmd_simulate, "infer": cmd_infer, "evaluate": cmd_evaluate, "predict": cmd_predict}


def main(argv=None):
    parser = build_parser()
    try:
        given = vars(parser.parse_args(argv))
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        a = resolve(given["command"], given)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[given["command"]](a)
    except NumericalError as exc:
        print(f"gchmm: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GchmmError, OSError) as exc:
        print(f"gchmm: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
