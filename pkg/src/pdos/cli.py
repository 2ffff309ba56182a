"""Batch command line: every run writes its table plus a JSON manifest that can be replayed."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Dependent, Independent, Instance, ThresholdSchedule

log = logging.getLogger("pdos")

DEFAULT_P = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
BOUNDS_COLUMNS = ["p", "lower", "upper", "method_lower", "method_upper", "N", "k_max", "runtime_ms"]
SIM_COLUMNS = ["instance_id", "k", "N", "trials", "alg_mean", "alg_stderr", "opt_mean", "ratio", "seed"]
VOLATILE = {"bounds": ["runtime_ms"]}


class InputError(ValueError):
    """Malformed input file; the message carries file and line."""


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if math.isnan(x) else format(x, ".12g")
    return str(x)


def _source_hash() -> str:
    h = hashlib.sha256()
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.read_bytes())
    return h.hexdigest()[:10]


@dataclass
class RunManifest:
    command: str
    params: dict
    seed: int = 0
    git_like_version: str = ""
    outputs: list = field(default_factory=list)
    volatile_columns: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: Path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text()))


def _digest(path: Path, volatile: list[str]) -> str:
    data = path.read_bytes()
    if volatile and path.suffix == ".csv":
        rows = list(csv.DictReader(io.StringIO(data.decode())))
        for r in rows:
            for c in volatile:
                r[c] = ""
        data = json.dumps(rows, sort_keys=True).encode()
    return hashlib.sha256(data).hexdigest()


def _finish(out: Path, command: str, params: dict, files: list[Path], seed: int = 0) -> Path:
    vol = VOLATILE.get(command, [])
    man = RunManifest(command, params, seed, f"{__version__}+src.{_source_hash()}",
                      [{"path": f.name, "sha256": _digest(f, vol)} for f in files], vol)
    path = out / f"{command}.manifest.json"
    path.write_text(man.to_json())
    return path


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])


def _write_json(path: Path, obj) -> None:
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, (float, np.floating)):
            return float(fmt(v))
        if isinstance(v, np.integer):
            return int(v)
        return v

    path.write_text(json.dumps(conv(obj), indent=2) + "\n")


def _emit(out: Path, stem: str, columns: list[str], rows: list[dict], form: str) -> Path:
    if form == "json":
        path = out / f"{stem}.json"
        _write_json(path, [{c: r[c] for c in columns} for r in rows])
    else:
        path = out / f"{stem}.csv"
        _write_csv(path, columns, rows)
    return path


# --- input files ------------------------------------------------------------------------


def read_instance(path: str | Path) -> Instance:
    """One value per line, largest first; ``tail <v>`` sets the no-selection reward.

    Blank lines and ``#`` comments are ignored.
    """
    vals, tail = [], 0.0
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "tail" and len(parts) == 2:
                tail = float(parts[1])
                continue
            if len(parts) != 1:
                raise ValueError
            v = float(parts[0])
        except ValueError:
            raise InputError(f"{path}:{n}: expected a number, got {raw.strip()!r}") from None
        if not math.isfinite(v):
            raise InputError(f"{path}:{n}: value must be finite")
        if vals and v > vals[-1]:
            raise InputError(f"{path}:{n}: values must be non-increasing ({v} after {vals[-1]})")
        vals.append(v)
    if not vals:
        raise InputError(f"{path}: no values")
    try:
        return Instance(tuple(vals), tail)
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None


def read_schedule(path: str | Path) -> ThresholdSchedule:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}:{e.lineno}: {e.msg}") from None
    try:
        return ThresholdSchedule.from_json(d)
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}:1: invalid schedule ({e})") from None


def _p_list(text: str) -> list[float]:
    return sorted(float(s) for s in text.split(",") if s.strip())


# --- commands -----------------------------------------------------------------------------


def cmd_classic(args) -> int:
    from .threshold import Classic, classic_closed_forms, optimize_rp

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problems = [Classic(args.problem)] if args.problem != "all" else list(Classic)
    rows = []
    for prob in problems:
        if args.p == 0:
            sched, value = classic_closed_forms(prob, K=args.kmax)
        else:
            inst = {Classic.SECRETARY: Instance((1.0,), 0.0), Classic.ONE_TWO: Instance((1.0, 1.0), 0.0),
                    Classic.MIN_RANK: Instance((-1.0,), -2.0, tail_step=1.0)}[prob]
            sol = optimize_rp(inst, args.p, K=args.kmax if prob is Classic.MIN_RANK else None)
            sched, value = sol.schedule, sol.value
        if prob is Classic.MIN_RANK:
            value = -value  # report the expected rank
        for i, t in enumerate(sched.times[: args.show], start=1):
            rows.append({"problem": prob.value, "p": args.p, "i": i, "t_i": t, "value": value})
        print(f"{prob.value}: value {fmt(value)}  t = {', '.join(fmt(t) for t in sched.times[:args.show])}")
    path = _emit(out, "classic", ["problem", "p", "i", "t_i", "value"], rows, args.format)
    _finish(out, "classic", _params(args), [path])
    return 0


def cmd_bounds(args) -> int:
    from .limit import certify

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, ok = [], True
    for p in _p_list(args.p):
        try:
            c = certify(p, N=args.n, k_max=args.kmax, backend=args.backend)
            rows.append({"p": p, "lower": c.lower, "upper": c.upper, "method_lower": c.method_lower.value,
                         "method_upper": c.method_upper.value, "N": c.params["N"],
                         "k_max": c.params["k_max"], "runtime_ms": round(c.runtime_ms)})
            log.info("p=%s lower=%s upper=%s", fmt(p), fmt(c.lower), fmt(c.upper))
        except Exception as e:  # one bad row must not sink the table
            ok = False
            print(f"p={fmt(p)}: {type(e).__name__}: {e}", file=sys.stderr)
            rows.append({"p": p, "lower": math.nan, "upper": math.nan, "method_lower": "failed",
                         "method_upper": "failed", "N": args.n, "k_max": args.kmax or 0, "runtime_ms": 0})
    path = _emit(out, "bounds", BOUNDS_COLUMNS, rows, args.format)
    files = [path]
    if args.plot:
        files.append(plot_bounds(rows, out / "bounds.png"))
    _finish(out, "bounds", _params(args), files)
    return 0 if ok else 1


def plot_bounds(rows: list[dict], path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    good = [r for r in rows if not math.isnan(r["lower"])]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if good:
        p = [r["p"] for r in good]
        ax.fill_between(p, [r["lower"] for r in good], [r["upper"] for r in good], alpha=0.3, lw=0)
        ax.plot(p, [r["lower"] for r in good], "o-", ms=3, label="lower")
        ax.plot(p, [r["upper"] for r in good], "s--", ms=3, label="upper")
        ax.legend(frameon=False)
    ax.set_xlabel("sampling rate p")
    ax.set_ylabel(r"$\alpha(p)$")
    fig.tight_layout()
    # fixed metadata keeps the file byte-stable across runs
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def cmd_simulate(args) -> int:
    from .simulator import simulate_threshold

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = read_schedule(args.schedule)
    if args.instance:
        instances = [(Path(args.instance).stem, "", read_instance(args.instance))]
        N = instances[0][2].N
    else:
        N = args.n
        instances = [("step", k, Instance.step(k, N)) for k in range(1, min(args.sweep, N) + 1)]
    p = schedule.p if args.p is None else args.p
    model = Dependent.from_rate(p, N) if args.model == "dependent" else Independent(p)
    if isinstance(model, Dependent) and abs(model.p - p) > 1e-12:
        print(f"history size h = {model.h}; effective p = {fmt(model.p)}", file=sys.stderr)
    run = simulate_threshold(N, schedule, model, args.trials, args.seed)
    from .simulator import Estimate

    rows = []
    for name, k, inst in instances:
        alg, opt = run.values(inst)
        a, o = Estimate.from_samples(alg), Estimate.from_samples(opt)
        rows.append({"instance_id": name, "k": k, "N": N, "trials": args.trials, "alg_mean": a.mean,
                     "alg_stderr": a.stderr, "opt_mean": o.mean,
                     "ratio": a.mean / o.mean if o.mean else math.nan, "seed": args.seed})
    if len(rows) > 1:
        worst = min(rows, key=lambda r: r["ratio"])
        print(f"worst k = {worst['k']}: ratio {fmt(worst['ratio'])}")
    else:
        print(f"ratio {fmt(rows[0]['ratio'])}")
    path = _emit(out, "sim", SIM_COLUMNS, rows, args.format)
    _finish(out, "simulate", _params(args), [path], seed=args.seed)
    return 0


def cmd_lp(args) -> int:
    from .finite_lp import build_known_values_lp, build_sdlp, extract_policy
    from .simplex import LpError, solve_lp

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "known":
        if not args.instance:
            print("lp known needs --instance", file=sys.stderr)
            return 2
        inst = read_instance(args.instance)
        model = build_known_values_lp(inst, args.h, args.exact)
        N = inst.N
    else:
        model = build_sdlp(args.n, args.h, exact=args.exact) if args.exact else build_sdlp(args.n, args.h)
        N = args.n
    try:
        sol = solve_lp(model, exact=args.exact, backend=args.backend)
    except LpError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    assign = {k: float(v) for k, v in sol.assignment.items()}
    rule = extract_policy(assign, args.h, N)
    policy = {f"{i},{l}": rule.x[i, l] for i in range(args.h + 1, N + 1) for l in range(1, i + 1)
              if rule.x[i, l] > 1e-15}
    res = {"mode": args.mode, "N": N, "h": args.h, "optimum": float(sol.optimum),
           "optimum_exact": str(sol.optimum) if args.exact else None, "policy": policy,
           "tight_constraints": [int(r) for r in sol.tight_rows], "iterations": sol.iterations}
    print(f"optimum {fmt(float(sol.optimum))}")
    path = out / "lp.json"
    _write_json(path, res)
    _finish(out, "lp", _params(args), [path])
    return 0


def cmd_replay(args) -> int:
    src = Path(args.manifest)
    man = RunManifest.load(src)
    with tempfile.TemporaryDirectory() as tmp:
        argv = [man.command] + _argv(man.params) + ["--out", tmp]
        rc = main(argv)
        if rc != 0:
            return rc
        bad = []
        for o in man.outputs:
            f = Path(tmp) / o["path"]
            if not f.exists() or _digest(f, man.volatile_columns) != o["sha256"]:
                bad.append(o["path"])
    if bad:
        print("replay differs: " + ", ".join(bad))
        return 1
    print(f"replay matches {len(man.outputs)} output file(s)")
    return 0


# --- argument plumbing ----------------------------------------------------------------------


_SKIP = {"func", "out", "verbose", "command"}


def _params(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _SKIP}


def _argv(params: dict) -> list[str]:
    pos = [params[k] for k in ("problem", "mode") if k in params]
    argv = [str(v) for v in pos]
    for k, v in params.items():
        if k in ("problem", "mode") or v is None or v is False:
            continue
        flag = "--" + k.replace("_", "-")
        argv += [flag] if v is True else [flag, str(v)]
    return argv


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdos", description="Optimal stopping with a sampled history.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--out", default=out_default, help="output directory (default: %(default)s)")
        sp.add_argument("--format", choices=["csv", "json"], default="csv", help="table format (default: csv)")

    c = sub.add_parser("classic", help="secretary, (1,2)-secretary and minimum-rank thresholds")
    c.add_argument("problem", choices=["secretary", "one-two", "min-rank", "all"])
    c.add_argument("--p", type=float, default=0.0, help="sampling rate (default: 0)")
    c.add_argument("--kmax", type=int, default=500, help="explicit thresholds for min-rank (default: 500)")
    c.add_argument("--show", type=int, default=10, help="thresholds listed in the output (default: 10)")
    common(c, "out")
    c.set_defaults(func=cmd_classic)

    b = sub.add_parser("bounds", help="lower/upper bounds on the limit ratio over a grid of p")
    b.add_argument("--p", default=DEFAULT_P, help="comma-separated rates (default: 0.1,...,0.9)")
    b.add_argument("--n", type=int, default=300, help="size of the upper-bound program (default: 300)")
    b.add_argument("--kmax", type=int, default=None, help="local ranks kept in the lower-bound program")
    b.add_argument("--backend", choices=["simplex", "highs"], default="simplex")
    b.add_argument("--plot", action="store_true", help="also write bounds.png")
    common(b, "out")
    b.set_defaults(func=cmd_bounds)

    s = sub.add_parser("simulate", help="Monte Carlo for a threshold schedule")
    s.add_argument("--schedule", required=True, help="schedule JSON {p, times, tail_is_one}")
    s.add_argument("--instance", help="instance file; omit for the 0/1 step sweep")
    s.add_argument("--sweep", type=int, default=20, help="largest k in the step sweep (default: 20)")
    s.add_argument("--n", type=int, default=2000, help="items for the step sweep (default: 2000)")
    s.add_argument("--model", choices=["independent", "dependent"], default="independent")
    s.add_argument("--p", type=float, default=None, help="sampling rate (default: the schedule's p)")
    s.add_argument("--trials", type=int, default=100_000, help="default: 100000")
    s.add_argument("--seed", type=int, default=0)
    common(s, "out")
    s.set_defaults(func=cmd_simulate)

    lp = sub.add_parser("lp", help="solve the finite program for known values or the dominance program")
    lp.add_argument("mode", choices=["known", "sdlp"])
    lp.add_argument("--n", type=int, default=10)
    lp.add_argument("--h", type=int, default=0)
    lp.add_argument("--instance")
    lp.add_argument("--exact", action="store_true", help="rational arithmetic")
    lp.add_argument("--backend", choices=["simplex", "highs"], default="simplex")
    lp.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    lp.set_defaults(func=cmd_lp)

    r = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    r.add_argument("manifest")
    r.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
