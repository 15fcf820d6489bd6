"""Command line runner: one subcommand per module, JSON configs in, CSV/JSON reports out.

Exit codes: 0 all checks pass, 1 some check fails, 2 invalid config (nothing
written), 3 computation error (nothing written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shutil
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

from . import __version__
from .comparison import (
    build_divisible_element,
    cuntz_witness_diagonal,
    diagonal_indicator,
    dynamical_compare,
    measure_gap_check,
    quarter_criterion,
    rank_compare_diagonal,
)
from .crossed import CrossedElement, LocallyConstant, tsdg_construct, tsdg_verify
from .groupoids import (
    GroupoidMatrixModel,
    build_groupoid,
    orbit_invariance_report,
    orbit_partition_sum,
    tower_shape_function,
    verify_groupoid_axioms,
)
from .systems import (
    Clopen,
    ProductSystem,
    estimate_ocap,
    exact_measure,
    generate_window,
    system_from_dict,
    translate,
)
from .towers import kakutani_rokhlin, urp_towers

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_COMPUTE = 0, 1, 2, 3

OPERATIONS = ("system", "towers", "groupoid", "compare", "tsdg")
TOP_FIELDS = {"operation", "system", "params", "seed", "outputs"}
PARAMS = {
    "system": {"clopens", "measure_radius", "ocap"},
    "towers": {"method", "Y", "K", "eps"},
    "groupoid": {"Y", "K", "eps", "extend"},
    "compare": {"mode", "A", "B", "E", "F", "lambda", "window", "Y", "eps", "r"},
    "tsdg": {"Y", "N", "L", "delta", "f", "h", "F", "strict", "window_length"},
}
COMPARE_MODES = ("dynamical", "quarter", "measure", "rank", "divisible")


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# formatting
# ----------------------------------------------------------------------------

def exact_str(v) -> str:
    if isinstance(v, Fraction):
        return str(v)
    return str(v)


def as_float(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def jsonable(v):
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, (frozenset, set)):
        return sorted(jsonable(x) for x in v)
    if isinstance(v, bool) or v is None or isinstance(v, (int, str)):
        return v
    if isinstance(v, float):
        return v
    if isinstance(v, Clopen):
        return v.to_dict()
    if hasattr(v, "item"):
        return v.item()
    return exact_str(v)


def dump_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def dump_csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([jsonable(x) if not isinstance(x, str) else x for x in r])
    return buf.getvalue()


class Report:
    def __init__(self):
        self.checks = []
        self.files = {}

    def check(self, name, expected, measured, ok):
        self.checks.append({"name": name, "expected": jsonable(expected), "measured": jsonable(measured), "pass": bool(ok)})

    @property
    def ok(self):
        return all(c["pass"] for c in self.checks)


def write_atomic(out: Path, files: dict):
    """Write every file to a sibling temp dir, then move them into place."""
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=out))
    try:
        for name, text in files.items():
            (tmp / name).write_text(text, encoding="utf-8")
        for name in sorted(files):
            os.replace(tmp / name, out / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


# ----------------------------------------------------------------------------
# config parsing
# ----------------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(cfg) - TOP_FIELDS
    if extra:
        raise ConfigError(f"unknown config fields: {sorted(extra)}")
    return cfg


def _clopen(system, d, name):
    try:
        return Clopen.from_dict(system, d)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"{name}: {e}") from e


def _need(params, key, op):
    if key not in params:
        raise ConfigError(f"{op}: missing parameter {key!r}")
    return params[key]


def _int(v, name):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer")
    return v


def _num(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number")
    return v


def _window(v):
    if isinstance(v, int) and not isinstance(v, bool):
        if v < 0:
            raise ConfigError("window must be >= 0")
        return list(range(-v, v + 1))
    if isinstance(v, list) and all(isinstance(x, int) for x in v) and v:
        return sorted(set(v))
    raise ConfigError("window must be an integer W (meaning -W..W) or a nonempty list of integers")


def _function(system, d, name):
    if not isinstance(d, dict) or set(d) != {"radius", "values"}:
        raise ConfigError(f"{name} must be {{'radius', 'values'}}")
    r = _int(d["radius"], f"{name}.radius")
    legal = set(system.words(r))
    vals = {}
    for w, v in d["values"].items():
        if w not in legal:
            raise ConfigError(f"{name}: inadmissible word {w!r}")
        vals[w] = Fraction(v) if isinstance(v, str) else v
    return LocallyConstant(system, r, vals)


class Plan:
    """A validated config: everything that can fail as bad input is done here."""

    def __init__(self, cfg: dict, op: str, seed=None, radius=None, window_length=None):
        if cfg.get("operation", op) != op:
            raise ConfigError(f"config operation {cfg.get('operation')!r} does not match subcommand {op!r}")
        if op not in OPERATIONS:
            raise ConfigError(f"unknown operation {op!r}")
        self.op = op
        if "system" not in cfg:
            raise ConfigError("missing 'system'")
        try:
            self.system = system_from_dict(cfg["system"])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"system: {e}") from e
        params = cfg.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("params must be an object")
        extra = set(params) - PARAMS[op]
        if extra:
            raise ConfigError(f"unknown {op} parameters: {sorted(extra)}")
        self.params = params
        self.seed = seed if seed is not None else cfg.get("seed")
        if self.seed is not None:
            _int(self.seed, "seed")
        self.radius = radius
        self.window_length = window_length
        outputs = cfg.get("outputs", {})
        if not isinstance(outputs, dict) or set(outputs) - {"dir"}:
            raise ConfigError("outputs must be an object with an optional 'dir'")
        self.out_dir = outputs.get("dir")
        self.echo = dict(cfg, seed=self.seed, operation=op)
        getattr(self, f"_parse_{op}")()

    def _require_seed(self, why):
        if self.seed is None:
            raise ConfigError(f"a seed is required ({why})")

    def _parse_system(self):
        p = self.params
        cl = p.get("clopens", {})
        if not isinstance(cl, dict):
            raise ConfigError("clopens must be an object name -> clopen")
        self.clopens = {k: _clopen(self.system, v, f"clopens.{k}") for k, v in sorted(cl.items())}
        mr = p.get("measure_radius", self.radius if self.radius is not None else 1)
        self.measure_radius = _int(mr, "measure_radius")
        self.ocap = None
        if "ocap" in p:
            o = p["ocap"]
            if not isinstance(o, dict) or set(o) - {"set", "n", "samples"} or "set" not in o or "n" not in o:
                raise ConfigError("ocap needs 'set' and 'n' (and optional 'samples')")
            if o["set"] not in self.clopens:
                raise ConfigError(f"ocap set {o['set']!r} is not a named clopen")
            self.ocap = (o["set"], _int(o["n"], "ocap.n"), _int(o.get("samples", 1000), "ocap.samples"))
            self._require_seed("orbit capacity may sample")

    def _parse_towers(self):
        p = self.params
        self.method = p.get("method", "kakutani_rokhlin")
        if self.method == "kakutani_rokhlin":
            self.Y = _clopen(self.system, _need(p, "Y", "towers"), "Y")
        elif self.method == "urp":
            K = _need(p, "K", "towers")
            d = self.system.rank if isinstance(self.system, ProductSystem) else 1
            self.K = frozenset(tuple(k) if d > 1 else int(k) for k in K)
            self.eps = _num(_need(p, "eps", "towers"), "eps")
        else:
            raise ConfigError(f"unknown tower method {self.method!r}")

    def _parse_groupoid(self):
        p = self.params
        self.Y = _clopen(self.system, _need(p, "Y", "groupoid"), "Y")
        self.K = frozenset(int(k) for k in p.get("K", [-1, 0, 1]))
        self.eps = _num(p.get("eps", 0.1), "eps")
        self.extend = bool(p.get("extend", True))

    def _parse_compare(self):
        p = self.params
        self.mode = p.get("mode", "dynamical")
        if self.mode not in COMPARE_MODES:
            raise ConfigError(f"unknown compare mode {self.mode!r}")
        self.lam = _num(p.get("lambda", 0.25), "lambda")
        if self.mode == "dynamical":
            self.A = _clopen(self.system, _need(p, "A", "compare"), "A")
            self.B = _clopen(self.system, _need(p, "B", "compare"), "B")
            self.window = _window(_need(p, "window", "compare"))
        elif self.mode == "divisible":
            self.Y = _clopen(self.system, _need(p, "Y", "compare"), "Y")
            self.r = _num(_need(p, "r", "compare"), "r")
            self.eps = _num(p.get("eps", 0.05), "eps")
        else:
            self.E = _clopen(self.system, _need(p, "E", "compare"), "E")
            self.F = _clopen(self.system, _need(p, "F", "compare"), "F")
            if self.mode in ("quarter", "rank"):
                self.Y = _clopen(self.system, _need(p, "Y", "compare"), "Y")
            self.eps = _num(p.get("eps", 1e-6), "eps")

    def _parse_tsdg(self):
        p = self.params
        s = self.system
        self.Y = _clopen(s, _need(p, "Y", "tsdg"), "Y")
        self.N = frozenset(_int(g, "N") for g in _need(p, "N", "tsdg"))
        self.L = _int(_need(p, "L", "tsdg"), "L")
        self.delta = _num(_need(p, "delta", "tsdg"), "delta")
        self.f_list = []
        for i, d in enumerate(p.get("f", [])):
            try:
                self.f_list.append(CrossedElement.from_dict(s, d))
            except (ValueError, TypeError, KeyError, AttributeError) as e:
                raise ConfigError(f"f[{i}]: {e}") from e
        self.F = _clopen(s, p.get("F", {"radius": 0, "words": list(s.words(0))}), "F")
        self.h = _function(s, p["h"], "h") if "h" in p else LocallyConstant.indicator(self.F)
        self.strict = bool(p.get("strict", False))
        wl = p.get("window_length", self.window_length if self.window_length is not None else 10000)
        self.wl = _int(wl, "window_length")
        self._require_seed("the orbit window is sampled")


# ----------------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------------

def op_system(pl: Plan, rep: Report):
    s = pl.system
    words = s.words(pl.measure_radius)
    total = 0
    rows = []
    for w in sorted(words):
        m = exact_measure(Clopen(s, pl.measure_radius, [w], check=False))
        total = m + total
        rows.append(["|".join(w) if isinstance(w, tuple) else w, exact_str(m), as_float(m)])
    rep.check("total_measure", 1, exact_str(total), total == 1)
    info = {}
    for name, E in pl.clopens.items():
        m = exact_measure(E)
        info[name] = {"clopen": E.to_dict(), "measure": exact_str(m), "measure_float": as_float(m)}
        if not isinstance(s, ProductSystem):
            mt = exact_measure(translate(E, 1))
            rep.check(f"invariance:{name}", exact_str(m), exact_str(mt), m == mt)
    if pl.ocap:
        name, n, samples = pl.ocap
        info[name]["ocap"] = estimate_ocap(s, pl.clopens[name], n, sample_count=samples, seed=pl.seed)
        info[name]["ocap_n"] = n
    doc = {"system": s.to_dict(), "minimal": getattr(s, "minimal", None), "free": getattr(s, "free", None), "clopens": info}
    rep.files["system.json"] = dump_json(doc)
    rep.files["measures.csv"] = dump_csv(["word", "measure", "measure_float"], rows)


def op_towers(pl: Plan, rep: Report):
    s = pl.system
    td = kakutani_rokhlin(s, pl.Y) if pl.method == "kakutani_rokhlin" else urp_towers(s, pl.K, pl.eps)
    rows = []
    for i, height, m, prod in td.rows():
        rows.append([i, height, exact_str(m), as_float(m), exact_str(prod)])
    rep.files["towers.csv"] = dump_csv(["tower", "height", "base_measure", "base_measure_float", "product"], rows)
    rep.files["towers.json"] = dump_json(td.to_dict())
    total = sum((r[3] for r in td.rows()), Fraction(0)) + exact_measure(td.complement)
    rep.check("measure_sum", 1, exact_str(total), total == 1)
    if "partition" in td.checks:
        rep.check("partition", True, td.checks["partition"]["exact"], td.checks["partition"]["exact"])
    if "kac_sum" in td.checks:
        rep.check("kac_sum", 1, exact_str(td.checks["kac_sum"]), td.checks["kac_sum"] == 1)
    if "invariant" in td.checks:
        rep.check("invariance", f"< {pl.eps}", [as_float(d) for d in td.checks["defects"]], td.checks["invariant"])


def op_groupoid(pl: Plan, rep: Report):
    s = pl.system
    sf = tower_shape_function(s, pl.Y)
    g = build_groupoid(sf, extend=pl.extend)
    ax = verify_groupoid_axioms(g)
    rep.check("axioms", True, ax["ok"], ax["ok"])
    tot = orbit_partition_sum(g)
    rep.check("orbit_partition_sum", 1, exact_str(tot), tot == 1)
    inv = orbit_invariance_report(g, pl.K, pl.eps)
    rows = []
    for (F, Z), r in zip(sf.cells, inv["rows"]):
        m = exact_measure(Z)
        rows.append([" ".join(str(x) for x in sorted(F)), len(F), exact_str(m), as_float(m), as_float(r["defect"])])
    rep.files["blocks.csv"] = dump_csv(["shape", "size", "cell_measure", "cell_measure_float", "invariance_defect"], rows)
    rep.files["groupoid.json"] = dump_json({"shape_function": sf.to_dict(), "groupoid": g.to_dict(), "axioms": ax})


def op_compare(pl: Plan, rep: Report):
    s = pl.system
    verdicts = {"mode": pl.mode}
    if pl.mode == "dynamical":
        res = dynamical_compare(s, pl.A, pl.B, pl.window)
        if res:
            v = res.validate(pl.A, pl.B)
            rep.check("witness_found", True, True, True)
            rep.check("witness_valid", True, v["valid"], v["valid"])
            rep.files["witness.json"] = dump_json(res.to_dict())
            verdicts.update(found=True, pieces=len(res.pieces))
        else:
            rep.check("witness_found", True, False, False)
            rep.files["witness.json"] = dump_json(res.to_dict())
            verdicts.update(res.to_dict())
    elif pl.mode == "measure":
        ok = measure_gap_check(s, pl.E, pl.F, pl.lam)
        verdicts.update(mu_E=exact_str(exact_measure(pl.E)), mu_F=exact_str(exact_measure(pl.F)), result=ok)
        rep.check("measure_gap", f"mu(E) < {pl.lam} mu(F)", ok, ok)
    elif pl.mode == "divisible":
        td = kakutani_rokhlin(s, pl.Y)
        de = build_divisible_element(s, td, pl.r, pl.eps)
        verdicts.update(de.report)
        rep.check("d_within_eps", f"|d - {pl.r}| < {pl.eps}", exact_str(de.d), de.report["within_eps"])
        rep.check("d_two_routes", exact_str(de.d), exact_str(de.d_model), de.report["agree"])
        rep.files["divisible.json"] = dump_json({"F": de.F, "levels": de.levels, "ones": de.ones, "d": de.d})
    else:
        g = build_groupoid(tower_shape_function(s, pl.Y))
        q = quarter_criterion(g, pl.E, pl.F, pl.lam)
        verdicts.update({k: v for k, v in q.items()})
        rep.check("quarter_criterion", "both inequalities", q["pass"], q["pass"])
        if pl.mode == "rank":
            R = max(pl.E.radius, pl.F.radius)
            model = GroupoidMatrixModel(g, R)
            a, b = diagonal_indicator(model, pl.E), diagonal_indicator(model, pl.F)
            rc = rank_compare_diagonal(a, b, pl.lam)
            rep.files["ranks.csv"] = dump_csv(
                ["block", "cell", "rank_a", "rank_b", "le", "quarter"],
                [[r["cell"][0], r["cell"][1], r["rank_a"], r["rank_b"], r["le"], r["quarter"]] for r in rc["rows"]],
            )
            rep.check("rank_le", True, rc["le_pass"], rc["le_pass"])
            rep.check("rank_quarter", True, rc["quarter_pass"], rc["quarter_pass"])
            if rc["le_pass"]:
                cw = cuntz_witness_diagonal(a, b, pl.eps, model)
                rep.check("cuntz_witness", f"error <= {pl.eps}", cw.max_error, cw.valid())
                rep.files["witness.json"] = dump_json({
                    "eps": pl.eps,
                    "cells": [{"cell": list(k), "s": m.tolist(), "error": cw.errors[k]} for k, m in sorted(cw.matrices.items(), key=str)],
                })
    rep.files["verdicts.json"] = dump_json(verdicts)


def op_tsdg(pl: Plan, rep: Report):
    s = pl.system
    td = kakutani_rokhlin(s, pl.Y)
    con = tsdg_construct(s, td, pl.f_list, pl.h, pl.F, pl.delta, pl.L, pl.N, strict=pl.strict)
    w = generate_window(s, pl.wl, pl.seed)
    res = tsdg_verify(con, pl.delta, w, seed=pl.seed)
    rows = []
    for r in res["rows"]:
        rows.append([r["property"], r["bound"], r["measured"], r["pass"]])
        rep.check(f"property_{r['property']}", r["bound"], r["measured"], r["pass"])
    rep.files["tsdg.csv"] = dump_csv(["property", "bound", "measured", "pass"], rows)
    rep.files["construction.json"] = dump_json({
        "levels": [{str(g): l for g, l in sorted(lv.items())} for lv in con.levels],
        "p": con.p.to_dict(),
        "preconditions": con.preconditions,
    })


DISPATCH = {"system": op_system, "towers": op_towers, "groupoid": op_groupoid, "compare": op_compare, "tsdg": op_tsdg}


def run(op: str, config_path, out=None, seed=None, radius=None, window_length=None, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        cfg = load_config(config_path)
        pl = Plan(cfg, op, seed=seed, radius=radius, window_length=window_length)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    rep = Report()
    try:
        DISPATCH[op](pl, rep)
    except Exception as e:  # noqa: BLE001 - reported as a computation error
        print(f"computation error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_COMPUTE
    doc = {
        "config": pl.echo,
        "checks": rep.checks,
        "pass": rep.ok,
        "provenance": {"package": "cantordyn", "version": __version__},
    }
    rep.files["report.json"] = dump_json(doc)
    rep.files["checks.csv"] = dump_csv(["name", "expected", "measured", "pass"],
                                       [[c["name"], c["expected"], c["measured"], c["pass"]] for c in rep.checks])
    target = Path(out or pl.out_dir or "out")
    write_atomic(target, rep.files)
    for c in rep.checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: measured {c['measured']} (expected {c['expected']})", file=stream)
    if op == "towers" and "towers.csv" in rep.files:
        stream.write(rep.files["towers.csv"])
    return EXIT_OK if rep.ok else EXIT_FAIL


def suite(directory, out=None, seed=None, radius=None, window_length=None, stream=None) -> int:
    """Run every *.json config in `directory` (sorted); each gets its own output dir."""
    stream = stream or sys.stdout
    d = Path(directory)
    if not d.is_dir():
        print(f"not a directory: {d}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out or "out")
    rows = []
    for path in sorted(d.glob("*.json")):
        try:
            op = load_config(path).get("operation")
        except ConfigError as e:
            print(f"{path.name}: invalid config: {e}", file=sys.stderr)
            rows.append([path.name, "", EXIT_CONFIG])
            continue
        if op not in OPERATIONS:
            print(f"{path.name}: missing or unknown operation {op!r}", file=sys.stderr)
            rows.append([path.name, str(op), EXIT_CONFIG])
            continue
        code = run(op, path, out / path.stem, seed, radius, window_length, stream=io.StringIO())
        rows.append([path.name, op, code])
    status = {EXIT_OK: "pass", EXIT_FAIL: "fail", EXIT_CONFIG: "invalid", EXIT_COMPUTE: "error"}
    table = [[n, op, code, status[code]] for n, op, code in rows]
    write_atomic(out, {"suite.csv": dump_csv(["config", "operation", "exit_code", "status"], table)})
    for n, op, code, st in table:
        print(f"{st.upper():7s} {n} ({op})", file=stream)
    return EXIT_OK if all(r[2] == EXIT_OK for r in rows) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cantordyn", description="Towers, groupoids and comparison on Cantor systems.")
    sub = ap.add_subparsers(dest="command", required=True)
    for op in OPERATIONS:
        sp = sub.add_parser(op)
        sp.add_argument("--config", required=True)
    sp = sub.add_parser("suite")
    sp.add_argument("directory", nargs="?")
    sp.add_argument("--config", help="directory of configs (same as the positional argument)")
    for sp in sub.choices.values():
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--radius", type=int)
        sp.add_argument("--window-length", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "suite":
        d = args.directory or args.config
        if d is None:
            print("suite needs a directory", file=sys.stderr)
            return EXIT_CONFIG
        return suite(d, args.out, args.seed, args.radius, args.window_length)
    return run(args.command, args.config, args.out, args.seed, args.radius, args.window_length)


if __name__ == "__main__":
    sys.exit(main())
