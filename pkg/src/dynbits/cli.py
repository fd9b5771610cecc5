"""Command-line front end.

Every run reads a JSON config, validates it against a per-command schema
(unknown fields are rejected), and writes one result file. A result holds a
table of rows plus a summary that is a pure function of the rows, the
config, and a hash of the semantic config fields, so reruns with the same
config and seed are byte-identical whatever the thread count.
"""

import argparse
import csv
import hashlib
import io
import json
import math
import sys

import jsonschema
import numpy as np

from . import energy, estimators, parity, process, runs, timeset
from .errors import BudgetExceededError, DomainError, DynbitsError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BUDGET = 0, 2, 3, 4
# fields that never change results and so never enter the config hash
NON_SEMANTIC = ("out", "format", "threads")

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_prob = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_seed = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_int_list = {"type": "array", "items": _pos_int, "minItems": 1}

TIMESET_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["type", "intervals"],
         "properties": {"type": {"const": "intervals"},
                        "intervals": {"type": "array", "minItems": 1,
                                      "items": {"type": "array", "items": _num,
                                                "minItems": 2, "maxItems": 2}}}},
        {"type": "object", "additionalProperties": False, "required": ["type", "points"],
         "properties": {"type": {"const": "points"},
                        "points": {"type": "array", "items": _num, "minItems": 1}}},
        {"type": "object", "additionalProperties": False, "required": ["type", "ratio", "depth"],
         "properties": {"type": {"const": "cantor"}, "left": _num, "length": _num,
                        "ratio": _num, "depth": {"type": "integer", "minimum": 0, "maximum": 20}}},
    ]
}

SCHEME_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["type", "q"],
         "properties": {"type": {"const": "mq"}, "q": _num, "continuous": {"type": "boolean"}}},
        {"type": "object", "additionalProperties": False, "required": ["type", "values"],
         "properties": {"type": {"const": "table"},
                        "values": {"type": "array", "items": _pos_int, "minItems": 3}}},
    ]
}

_common = {"command": {"type": "string"}, "seed": _seed, "threads": _pos_int,
           "out": {"type": "string"}, "format": {"enum": ["csv", "json"]}}


def _schema(required, props):
    return {"type": "object", "additionalProperties": False, "required": required,
            "properties": {**_common, **props}}


SCHEMAS = {
    "simulate": _schema(["k", "p", "horizon", "seed"],
                        {"k": _pos_int, "p": _prob, "horizon": {"type": "number", "exclusiveMinimum": 0}}),
    "capacity": _schema(["set"], {"set": TIMESET_SCHEMA, "eps_min": _num, "eps_max": _num,
                                  "num": _pos_int}),
    "dimprofile": _schema(["set", "s"], {"set": TIMESET_SCHEMA, "s": _num, "r_min": _num,
                                         "r_max": _num, "num": _pos_int,
                                         "route": {"enum": ["lp", "energy", "both"]},
                                         "grid_cap": _pos_int}),
    "hitprob": _schema(["set", "k", "ell", "p", "trials", "seed"],
                       {"set": TIMESET_SCHEMA, "k": _pos_int, "ell": {"type": "integer", "minimum": 0},
                        "p": _prob, "trials": _pos_int}),
    "verify": _schema(["kind"], {
        "kind": {"enum": ["thm1", "thm3", "return", "correlation"]},
        "set": TIMESET_SCHEMA, "p": _prob, "ell": {"type": "integer", "minimum": 0},
        "ells": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "k_grid": _int_list, "trials": _pos_int, "n_t": _pos_int, "grid_n": _pos_int}),
    "runs": _schema(["kind"], {
        "kind": {"enum": ["erdos_renyi", "dynamical", "series"]},
        "n": _pos_int, "p": _prob, "ell": {"type": "integer", "minimum": 0}, "seeds": _pos_int,
        "horizon": {"type": "number", "minimum": 0}, "set": TIMESET_SCHEMA,
        "thetas": {"type": "array", "items": _num, "minItems": 1}, "log_n_max": _num}),
    "parity": _schema(["kind", "scheme"], {
        "kind": {"enum": ["kernels", "sandwich", "tm"]}, "scheme": SCHEME_SCHEMA,
        "lambda_min": _num, "lambda_max": _num, "num": _pos_int, "D": _num,
        "atoms": _pos_int, "n_blocks": _pos_int, "trials": _pos_int}),
}

STOCHASTIC = {"simulate", "hitprob"}


def _needs_seed(cfg):
    cmd = cfg["command"]
    if cmd in STOCHASTIC:
        return True
    if cmd == "verify":
        return cfg["kind"] in ("thm1", "thm3")
    if cmd == "runs":
        return cfg["kind"] in ("erdos_renyi", "dynamical")
    if cmd == "parity":
        return cfg["kind"] == "tm"
    return False


def config_hash(cfg):
    """sha256 of the canonical JSON of the semantic fields."""
    semantic = {k: v for k, v in cfg.items() if k not in NON_SEMANTIC}
    text = json.dumps(semantic, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(command, path=None, overrides=None):
    cfg = {}
    if path is not None:
        with open(path) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise DomainError("config must be a JSON object")
    if "command" in cfg and cfg["command"] != command:
        raise DomainError(f"config is for {cfg['command']!r}, not {command!r}")
    cfg["command"] = command
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    jsonschema.validate(cfg, SCHEMAS[command])
    if _needs_seed(cfg) and "seed" not in cfg:
        raise DomainError(f"{command} needs a seed")
    return cfg


# --------------------------------------------------------------------------
# commands: each returns (columns, rows, extra meta); summaries come from rows


def _grid(cfg, lo_key, hi_key, lo, hi, num=13):
    return np.geomspace(cfg.get(hi_key, hi), cfg.get(lo_key, lo), cfg.get("num", num))


def cmd_simulate(cfg):
    traj = process.simulate_trajectory(cfg["k"], cfg["p"], cfg["horizon"], cfg["seed"])
    sums = traj.sums()
    rows = [[0.0, -1, -1, int(traj.initial_bits.sum())]]
    rows += [[float(t), int(i), int(v), int(s)]
             for t, i, v, s in zip(traj.times, traj.indices, traj.values, sums)]
    return ["time", "index", "value", "sum"], rows, {"initial_bits": traj.initial_bits.astype(int).tolist()}


def cmd_capacity(cfg):
    F = timeset.TimeSet.from_spec(cfg["set"])
    eps = _grid(cfg, "eps_min", "eps_max", 1e-6, 1e-1)
    rows = [[float(e), int(timeset.kolmogorov_capacity(F, e))] for e in eps]
    return ["eps", "K"], rows, {}


def cmd_dimprofile(cfg):
    F = timeset.TimeSet.from_spec(cfg["set"])
    s = cfg["s"]
    rs = _grid(cfg, "r_min", "r_max", 1e-5, 1e-2)
    route = cfg.get("route", "lp")
    cap = cfg.get("grid_cap", energy.MAX_GRID)
    rows = []
    for r in rs:
        n = energy.default_grid_n(F, r, cap)
        pack = energy.weighted_packing(F, s, r, n).value if route in ("lp", "both") else math.nan
        en = energy.min_energy(F, energy.PsiS(s), r, n).value if route in ("energy", "both") else math.nan
        rows.append([float(r), pack, en])
    return ["r", "N_r", "min_energy"], rows, {}


def cmd_hitprob(cfg):
    F = timeset.TimeSet.from_spec(cfg["set"])
    k, ell, p = cfg["k"], cfg["ell"], cfg["p"]
    est = estimators.mc_hit_prob(k, ell, p, F, cfg["trials"], cfg["seed"], cfg.get("threads", 1))
    exact = estimators.exact_hit_prob(k, k - ell, p, F)
    if F.measure > 0:
        br = estimators.grid_bracket(k, k - ell, p, F)
        lo, hi = br.interval
    else:
        lo = hi = exact
    rows = [[k, ell, p, est.trials, est.hits, est.ci95[0], est.ci95[1], exact, lo, hi]]
    return ["k", "ell", "p", "trials", "hits", "ci_lo", "ci_hi", "exact", "bracket_lo", "bracket_hi"], rows, {}


def cmd_verify(cfg):
    kind = cfg["kind"]
    threads = cfg.get("threads", 1)
    if kind in ("thm1", "thm3"):
        F = timeset.TimeSet.from_spec(cfg.get("set", {"type": "intervals", "intervals": [[0, 1]]}))
        trials = cfg.get("trials", 10**4)
        if kind == "thm1":
            rep = estimators.verify_thm1(F, cfg.get("p", 0.9), cfg.get("ell", 1),
                                         cfg.get("k_grid", [10, 20, 30, 40, 50, 60]), trials,
                                         cfg["seed"], threads)
        else:
            rep = estimators.verify_thm3(F, cfg.get("k_grid", [64, 128, 256]), trials, cfg["seed"],
                                         threads, cfg.get("grid_n", 1024))
        rows = [[int(k), e.trials, e.hits, float(t)]
                for k, e, t in zip(rep.k_values, rep.estimates, rep.theory_values)]
        return ["k", "trials", "hits", "theory"], rows, {}
    if kind == "return":
        rep = estimators.verify_return_asymptotics(cfg.get("k_grid", [2**j for j in range(4, 13)]),
                                                   n_t=cfg.get("n_t", 20))
        rows = [[int(k), float(t), float(r)]
                for k, ts, rs in zip(rep.k_values, rep.t_grids, rep.ratios) for t, r in zip(ts, rs)]
        return ["k", "t", "ratio"], rows, {}
    rep = estimators.verify_correlation_length(cfg.get("p", 0.9), cfg.get("ells", [0, 1, 2]),
                                               cfg.get("k_grid", [10, 20, 30, 40, 50, 60]))
    rows = [[int(ell), int(k), float(rep.lower[i, j]), float(rep.upper[i, j])]
            for i, ell in enumerate(rep.ells) for j, k in enumerate(rep.k_values)]
    return ["ell", "k", "ratio_lo", "ratio_hi"], rows, {}


def cmd_runs(cfg):
    kind = cfg["kind"]
    p, ell = cfg.get("p", 0.5), cfg.get("ell", 0)
    if kind == "erdos_renyi":
        n = cfg.get("n", 10**6)
        rows = []
        for i in range(cfg.get("seeds", 1)):
            rc = runs.erdos_renyi_check(n, p, ell, cfg["seed"] + i)
            rows.append([cfg["seed"] + i, n, rc.max_run, int(rc.truncated)])
        return ["seed", "n", "max_run", "truncated"], rows, {}
    if kind == "dynamical":
        n = cfg.get("n", 10**5)
        rows = []
        for i in range(cfg.get("seeds", 1)):
            d = runs.dynamical_run_sup(n, p, ell, cfg.get("horizon", 1.0), cfg["seed"] + i)
            rows.append([cfg["seed"] + i, n, d.initial_value, d.sup_value, d.start_value,
                         d.start_sup, int(d.truncated)])
        return ["seed", "n", "initial", "sup", "start_initial", "start_sup", "truncated"], rows, {}
    F = timeset.TimeSet.from_spec(cfg.get("set", {"type": "points", "points": [0]}))
    rows = []
    for theta in cfg.get("thetas", [0.5, 1.0, 1.5, 2.0, 2.5]):
        sd = runs.series_diagnostic(F, theta, p, ell, log_n_max=cfg.get("log_n_max", 5e4))
        rows.append([float(theta), sd.tail_exponent, sd.integral_exponent, float(sd.log_partial[-1])])
    return ["theta", "tail_exponent", "integral_exponent", "log_partial_sum"], rows, {}


def cmd_parity(cfg):
    scheme = parity.BlockScheme.from_spec(cfg["scheme"])
    kind = cfg["kind"]
    D = cfg.get("D", 1.0)
    if kind == "kernels":
        lams = _grid(cfg, "lambda_min", "lambda_max", 1e-4, D, 40)
        table, C = parity.kernel_curves(scheme, lams, D)
        return ["lambda", "riesz_product", "one_plus_Lg", "lower_bound"], table.tolist(), {"C": C}
    if kind == "sandwich":
        mu = energy.DiscreteMeasure.uniform(np.linspace(0.0, D, cfg.get("atoms", 256)))
        e = parity.energy_I_J(scheme, mu)
        C = parity.sandwich_constant(scheme, D)
        rows = [[e.I_off, e.J_off, e.offdiag_mass, e.diag_mass, C]]
        return ["I_off", "J_off", "offdiag_mass", "diag_mass", "C"], rows, {}
    est = parity.simulate_T_m(scheme, cfg.get("n_blocks", 12), cfg.get("trials", 10**4), cfg["seed"],
                              cfg.get("threads", 1))
    rows = [[n + 1, est.trials, int(c)] for n, c in enumerate(est.counts)]
    return ["n_blocks", "trials", "count"], rows, {}


COMMANDS = {"simulate": cmd_simulate, "capacity": cmd_capacity, "dimprofile": cmd_dimprofile,
            "hitprob": cmd_hitprob, "verify": cmd_verify, "runs": cmd_runs, "parity": cmd_parity}


# --------------------------------------------------------------------------
# summaries (pure functions of config and rows)


def _col(columns, rows, name):
    i = columns.index(name)
    return np.array([r[i] for r in rows], dtype=float)


def _slopes(x, y):
    try:
        s = timeset.sliding_slopes(x, y)
    except DomainError:
        return None, None
    return float(s.min()), float(s.max())


def derive_summary(cfg, columns, rows):
    cmd = cfg["command"]
    col = lambda name: _col(columns, rows, name)  # noqa: E731
    if cmd == "simulate":
        return {"events": len(rows) - 1, "final_sum": int(rows[-1][3])}
    if cmd == "capacity":
        eps, K = col("eps"), col("K")
        lo, hi = _slopes(np.log(1 / eps), np.log(K))
        return {"alpha": lo, "beta": hi, "K_min": int(K.min()), "K_max": int(K.max())}
    if cmd == "dimprofile":
        r, N, E = col("r"), col("N_r"), col("min_energy")
        out = {}
        if np.all(np.isfinite(N)):
            out["gamma"], out["delta"] = _slopes(np.log(1 / r), np.log(N))
        if np.all(np.isfinite(E)):
            out["gamma_energy"], out["delta_energy"] = _slopes(np.log(1 / r), -np.log(E))
        if np.all(np.isfinite(N)) and np.all(np.isfinite(E)):
            prod = N * E
            out["product_min"], out["product_max"] = float(prod.min()), float(prod.max())
        return out
    if cmd == "hitprob":
        trials, hits, lo, hi, exact = (col(c)[0] for c in ("trials", "hits", "ci_lo", "ci_hi", "exact"))
        p_hat = hits / trials
        half = (hi - lo) / 2
        return {"p_hat": float(p_hat), "half_width": float(half), "exact": float(exact),
                "agrees": bool(abs(p_hat - exact) <= 4 * half)}
    if cmd == "verify":
        kind = cfg["kind"]
        if kind in ("thm1", "thm3"):
            ratio = col("hits") / col("trials") / col("theory")
            k = col("k")
            out = {"band": [float(ratio.min()), float(ratio.max())],
                   "spread": float(ratio.max() / ratio.min()) if ratio.min() > 0 else None,
                   "low_hit_k": [int(kk) for kk, h in zip(k, col("hits")) if h < estimators.MIN_HITS]}
            p_hat = col("hits") / col("trials")
            if kind == "thm3" and np.all(p_hat > 0) and k.size > 1:
                out["slope"] = float(np.polyfit(np.log(k), np.log(p_hat), 1)[0])
            return out
        if kind == "return":
            ratio = col("ratio")
            return {"band": [float(ratio.min()), float(ratio.max())]}
        lo, hi, ell = col("ratio_lo"), col("ratio_hi"), col("ell")
        return {"spread_by_ell": {str(int(e)): float(hi[ell == e].max() / lo[ell == e].min())
                                  for e in np.unique(ell)}}
    if cmd == "runs":
        kind = cfg["kind"]
        p = cfg.get("p", 0.5)
        if kind == "erdos_renyi":
            n = col("n")
            ratio = col("max_run") / (np.log(n) / math.log(1 / p))
            return {"ratio_min": float(ratio.min()), "ratio_max": float(ratio.max()),
                    "fraction_in_band": float(np.mean((ratio >= 0.8) & (ratio <= 1.6)))}
        if kind == "dynamical":
            return {"sup_max": int(col("sup").max()),
                    "sup_ge_initial": bool(np.all(col("sup") >= col("initial")))}
        theta, tail = col("theta"), col("tail_exponent")
        out = {"diverges": [bool(t >= -1) for t in tail]}
        # linear interpolation of the -1 crossing between bracketing thetas
        for i in range(theta.size - 1):
            if tail[i] >= -1 > tail[i + 1]:
                w = (tail[i] + 1) / (tail[i] - tail[i + 1])
                out["theta_star"] = float(theta[i] + w * (theta[i + 1] - theta[i]))
        return out
    if cmd == "parity":
        kind = cfg["kind"]
        if kind == "kernels":
            I, up, low = col("riesz_product"), col("one_plus_Lg"), col("lower_bound")
            return {"upper_holds": bool(np.all(I <= up)), "lower_holds": bool(np.all(I >= low))}
        if kind == "sandwich":
            I, J, M, C = (col(c)[0] for c in ("I_off", "J_off", "offdiag_mass", "C"))
            return {"upper_holds": bool(I <= M + J), "lower_holds": bool(I >= (M + J) / (4 * (1 + C)))}
        counts, trials = col("count"), col("trials")
        est = counts / trials
        return {"estimates": est.tolist(), "monotone": bool(np.all(np.diff(est) <= 0))}
    raise DomainError(f"unknown command {cmd!r}")


# --------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def render(cfg, columns, rows, summary, meta, fmt):
    header = {"command": cfg["command"], "config_hash": config_hash(cfg), "seed": cfg.get("seed")}
    if fmt == "json":
        doc = {**header, "config": {k: v for k, v in cfg.items() if k not in NON_SEMANTIC},
               "columns": columns, "rows": [[_jsonable(v) for v in r] for r in rows],
               "summary": summary, "meta": meta}
        return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"
    buf = io.StringIO()
    for key, val in header.items():
        buf.write(f"# {key}: {json.dumps(val)}\n")
    buf.write("# config: " + json.dumps({k: v for k, v in cfg.items() if k not in NON_SEMANTIC},
                                        sort_keys=True) + "\n")
    buf.write("# summary: " + json.dumps(summary, sort_keys=True, allow_nan=False) + "\n")
    buf.write("# meta: " + json.dumps(meta, sort_keys=True, allow_nan=False) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def read_result(text):
    """Parse a result file into ``(header, config, columns, rows, summary)``."""
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        rows = [[float(v) if isinstance(v, str) else v for v in r] for r in doc["rows"]]
        return ({"command": doc["command"], "config_hash": doc["config_hash"], "seed": doc["seed"]},
                doc["config"], doc["columns"], rows, doc["summary"])
    header, lines = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            header[key] = json.loads(val)
        else:
            lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    rows = [[_parse(v) for v in r] for r in reader]
    cfg = header.pop("config")
    summary = header.pop("summary")
    header.pop("meta", None)
    return header, cfg, columns, rows, summary


def _parse(v):
    try:
        return int(v)
    except ValueError:
        return float(v)


def run(command, cfg):
    """Execute ``command`` and return the rendered result text."""
    columns, rows, meta = COMMANDS[command](cfg)
    # normalize through the text form so summaries see exactly what is written
    rows = [[_parse(_fmt(v)) for v in r] for r in rows]
    summary = derive_summary(cfg, columns, rows)
    return render(cfg, columns, rows, summary, meta, cfg.get("format", "json"))


def main(argv=None):
    parser = argparse.ArgumentParser(prog="dynbits", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, help="worker threads")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", choices=["csv", "json"])
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.command, args.config,
                          {"seed": args.seed, "threads": args.threads, "out": args.out,
                           "format": args.format})
        text = run(args.command, cfg)
    except (jsonschema.ValidationError, json.JSONDecodeError, OSError, DomainError) as exc:
        return _fail(exc, EXIT_CONFIG)
    except BudgetExceededError as exc:
        return _fail(exc, EXIT_BUDGET)
    except (NumericalError, DynbitsError, FloatingPointError) as exc:
        return _fail(exc, EXIT_NUMERIC)
    out = cfg.get("out")
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _fail(exc, code):
    msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": msg, "exit_code": code},
                                sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
