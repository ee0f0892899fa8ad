"""Command-line interface: ``cbl <command> [options]``.

Every command writes its artifacts plus ``certificate.json`` into ``--out``.
Exit codes: 0 success (solver status is data), 2 usage or input error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import io
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from . import holonomy as hol
from . import instances as ins
from . import stats as st
from .core import contextual_faces, curved_cores, kappa
from .errors import CBLInputError, InvariantViolation
from .operators import DomainTable, cbl_ac, cbl_cons, classical_ac, cons_sweep, verify_certificate
from .solver import baseline_solve, cbl_solve, count_compatible
from .treewidth import min_fill_decomposition, solve_treewidth

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT = 0, 2, 3


class Run:
    """Collects artifacts for one command and seals them with a certificate."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []
        self.summary: dict = {}

    def write(self, name: str, data: str | bytes) -> Path:
        p = self.out / name
        p.write_bytes(data.encode() if isinstance(data, str) else data)
        if p not in self.artifacts:
            self.artifacts.append(p)
        return p

    def seal(self) -> Path:
        params = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("out", "threads", "func")}
        params = {k: (str(v) if isinstance(v, (Path, Fraction)) else v) for k, v in params.items()}
        if "instance" in params:
            # record inputs by content, not by location
            data = Path(params["instance"]).read_bytes()
            params["instance"] = {"name": Path(params["instance"]).name,
                                  "sha256": hashlib.sha256(data).hexdigest()}
        if "artifacts" in params:
            params["artifacts"] = sorted(Path(a).name for a in params["artifacts"])
        meta = {
            "identity": {"tool": "cbl", "version": __version__, "command": self.args.command},
            "scope": "desk-scale reproduction run",
            "parameters": params,
            "master_seed": self.args.seed,
            "summary": self.summary,
        }
        cert = st.emit_certificate(meta, self.artifacts, self.out)
        path = self.out / "certificate.json"
        cert.write(path)
        return path


def _csv(rows, header) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _load(path: str) -> ins.CblInstance:
    p = Path(path)
    if not p.is_file():
        raise CBLInputError(f"no such instance file: {path}")
    return ins.parse(p.read_bytes())


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CBLInputError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CBLInputError(f"expected comma-separated integers, got {text!r}") from None


# -- commands ----------------------------------------------------------------


def cmd_gen(run: Run) -> None:
    a = run.args
    if a.family == "kcbs":
        inst = ins.gen_kcbs(a.n)
    elif a.family == "mermin":
        inst = ins.gen_mermin()
    elif a.family == "chain":
        inst = ins.gen_chain()
    elif a.family == "random":
        inst = ins.gen_random(a.vars, a.contexts, a.overlap, a.curved, a.seed)
    elif a.family == "adhoc":
        inst = ins.gen_adhoc(a.vars, a.contexts, a.seed)
    else:
        inst = ins.gen_mixture(a.p, a.length)
    path = run.write(a.name, ins.serialize(inst))
    run.summary = {"instance": inst.meta.name, "vars": inst.num_vars, "contexts": len(inst.system)}
    print(path)


def cmd_solve(run: Run) -> None:
    inst = _load(run.args.instance)
    results = []
    if run.args.solver in ("cbl", "all"):
        results.append(("cbl", cbl_solve(inst)))
    if run.args.solver in ("baseline", "all"):
        results.append(("baseline", baseline_solve(inst)))
    if run.args.solver in ("treewidth", "all"):
        results.append(("treewidth", solve_treewidth(inst, min_fill_decomposition(inst.system))))
    rows = []
    for name, r in results:
        s = r.stats
        rows.append([name, r.status, s.decisions, s.conflicts, s.learned_cuts, s.max_depth,
                     "" if s.unsat_detection_depth is None else s.unsat_detection_depth])
        print(f"{name}: {r.status}")
    statuses = {r.status for _, r in results}
    if len(statuses) > 1:
        raise InvariantViolation(f"solvers disagree: {rows}")
    run.write("solve.csv", _csv(rows, ["solver", "status", "decisions", "conflicts", "learned_cuts",
                                       "max_depth", "unsat_detection_depth"]))
    run.summary = {"status": results[0][1].status}


def cmd_count(run: Run) -> None:
    inst = _load(run.args.instance)
    n = count_compatible(inst)
    run.write("count.csv", _csv([[inst.meta.name, n]], ["instance", "count"]))
    run.summary = {"count": n}
    print(n)


def cmd_kappa(run: Run) -> None:
    inst = _load(run.args.instance)
    rep = kappa(inst.system)
    run.write("kappa.csv", _csv([[inst.meta.name, rep.kappa, rep.rank_d0, rep.rank_d1, *rep.cochain_dims]],
                                ["instance", "kappa", "rank_d0", "rank_d1", "c0", "c1", "c2"]))
    run.summary = {"kappa": rep.kappa}
    print(rep.kappa)


def cmd_cores(run: Run) -> None:
    inst = _load(run.args.instance)
    cores = curved_cores(inst.system, run.args.max_size)
    run.write("cores.csv", _csv([[i, " ".join(map(str, c.context_ids))] for i, c in enumerate(cores)],
                                ["core", "contexts"]))
    run.summary = {"cores": len(cores)}
    for c in cores:
        print(" ".join(map(str, c.context_ids)))


def cmd_ac(run: Run) -> None:
    inst = _load(run.args.instance)
    full = DomainTable.full(inst.num_vars)
    faces = contextual_faces(inst.system, run.args.max_size)
    dom, certs = cbl_ac(inst, full, faces)
    classical = classical_ac(inst, full)
    for c in certs:
        if not verify_certificate(inst, c):
            raise InvariantViolation("emitted certificate failed verification")
    rows = [[x, "".join(map(str, sorted(classical[x]))), "".join(map(str, sorted(dom[x])))] for x in range(inst.num_vars)]
    run.write("domains.csv", _csv(rows, ["var", "classical", "cbl"]))
    run.write("certificates.txt", "\n".join(c.to_text() for c in certs))
    run.summary = {"certificates": len(certs), "wipeout": dom.has_empty()}
    print(f"{len(certs)} certificates; {'infeasible' if dom.has_empty() else 'consistent'}")


def cmd_cons(run: Run) -> None:
    inst = _load(run.args.instance)
    a = run.args
    if a.edge:
        e = _ints(a.edge)
        if len(e) != 2 or a.var is None:
            raise CBLInputError("--edge needs two context ids and --var")
        cert = cbl_cons(inst, (e[0], e[1]), (a.var, a.value))
        certs = [cert] if cert else []
    else:
        certs = cons_sweep(inst, contextual_faces(inst.system, a.max_size))
    for c in certs:
        if not verify_certificate(inst, c):
            raise InvariantViolation("emitted certificate failed verification")
    run.write("cons.txt", "\n".join(c.to_text() for c in certs))
    run.summary = {"cuts": len(certs)}
    print(f"{len(certs)} cuts")


def _stream(a) -> st.Stream:
    return st.gen_stream(a.n, st.NoiseSpec(a.eta, a.rho, a.nu), a.seed, a.effect)


def cmd_scan(run: Run) -> None:
    a = run.args
    res = st.fold_scan(_stream(a), a.w, a.s, a.stat, a.B, a.alpha, a.seed)
    run.write("scan.csv", res.to_csv())
    frac = float(res.discoveries.mean()) if len(res.starts) else 0.0
    run.summary = {
        "windows": int(len(res.starts)),
        "discovery_fraction": round(frac, 6),
        "min_q": round(float(res.q.min()), 6) if len(res.q) else None,
        "epsilon": {"eta": a.eta, "rho": a.rho, "nu": a.nu},
        "fold": res.params,
    }
    print(f"discovery fraction {frac:.4f} over {len(res.starts)} windows")


def cmd_power(run: Run) -> None:
    a = run.args
    rows = st.power_grid(_ints(a.n_list), _floats(a.eps_list), _floats(a.rho_list), a.B, a.alpha, a.reps,
                         a.seed, a.window, a.eta, a.threads)
    run.write("power.csv", st.power_csv(rows))
    run.summary = {"cells": len(rows)}
    print(st.power_csv(rows), end="")


def _families(a) -> list[hol.LoopFamily]:
    fams = [hol.family(n.strip()) for n in a.families.split(",") if n.strip()]
    fams += [hol.mix_family(p) for p in _floats(a.mix)]
    return fams


def cmd_holonomy(run: Run) -> None:
    a = run.args
    theta0 = hol.calibrate_theta0(a.calibrate_to)
    model = hol.ConnectionModel(theta0, a.gate_law, seed=a.seed)
    fams = _families(a)
    points, line = hol.alpha_csvs(model, fams)
    run.write("cbl_alpha_points.csv", points)
    run.write("cbl_alpha_line.csv", line)
    fits = hol.family_intercepts(model, fams)
    rows = []
    for f in fams:
        ref = hol.FAMILY_TABLE.get(f.family_id) if f.kind == "family" else hol.MIX_TABLE.get(float(f.label))
        fit = fits[f.family_id]
        rel = "" if ref is None else f"{(fit.alpha_inf - ref) / ref:.6f}"
        rows.append([f.kind, f.label, f"{float(f.rho_face):.6f}", f"{fit.alpha_inf:.6f}", f"{fit.c:.6f}",
                     "" if ref is None else f"{ref:.6f}", rel])
    run.write("families.csv", _csv(rows, ["type", "label", "rho_face", "alpha_inf", "slope", "table", "rel_gap"]))
    run.summary = {"theta0": round(theta0, 12)}
    print(f"theta0 = {theta0:.7f}")
    for r in rows:
        print(",".join(r))


def cmd_falsify(run: Run) -> None:
    a = run.args
    model = hol.ConnectionModel(hol.calibrate_theta0(a.calibrate_to), a.gate_law, seed=a.seed)
    rep = hol.falsification_suite(model, _families(a))
    run.write("falsify.csv", _csv([[r.number, r.name, "pass" if r.passed else "fail", r.detail] for r in rep.rows],
                                  ["row", "test", "result", "detail"]))
    run.summary = {"all_pass": rep.passed}
    for r in rep.rows:
        print(f"{r.number} {r.name}: {'pass' if r.passed else 'FAIL'} ({r.detail})")


def cmd_turning(run: Run) -> None:
    a = run.args
    rows = []
    for n in range(3, a.n_max + 1):
        rows.append([n, f"{a.delta:.12f}", f"{hol.vertex_turning(n, a.delta, a.seed):.12f}",
                     f"{hol.turning_oracle(n, a.delta, a.seed):.12f}"])
    run.write("turning.csv", _csv(rows, ["n", "delta", "closed_form", "oracle"]))
    print(_csv(rows, ["n", "delta", "closed_form", "oracle"]), end="")


def cmd_rigidity(run: Run) -> None:
    a = run.args
    model = hol.ConnectionModel(a.theta, epsilon=0.0, seed=a.seed)
    fams = [hol.family(n) for n in hol.FAMILY_RHO]
    rows = []
    for laws in (("direct", "mirrored"), ("direct", "mirrored", "heavy")):
        samples, rho = hol.variational_samples(model, fams, laws)
        res = hol.variational_theta(samples, rho, a.L0)
        rows.append(["+".join(laws), f"{res.theta_star:.12f}", f"{res.sup_error:.12e}"])
    run.write("rigidity.csv", _csv(rows, ["gate_laws", "theta_star", "sup_error"]))
    print(_csv(rows, ["gate_laws", "theta_star", "sup_error"]), end="")


def cmd_certify(run: Run) -> None:
    missing = [p for p in run.args.artifacts if not Path(p).is_file()]
    if missing:
        raise CBLInputError("missing artifacts: " + ", ".join(missing))
    for p in run.args.artifacts:
        run.write(Path(p).name, Path(p).read_bytes())
    print(run.out / "certificate.json")


def run_pipeline(out: str | Path, seed: int = 0, threads: int = 1) -> list[Path]:
    """Fixed end-to-end run: instances, solvers, a scan, holonomy tables, falsification."""
    out = Path(out)
    steps = [
        ["gen", "--family", "kcbs", "--n", "5"],
        ["solve", str(out / "instance.cbl")],
        ["count", str(out / "instance.cbl")],
        ["kappa", str(out / "instance.cbl")],
        ["ac", str(out / "instance.cbl")],
        ["scan", "--n", "4096", "--w", "512", "--s", "512", "--B", "199"],
        ["holonomy", "--calibrate-to", "0.010204"],
        ["falsify"],
        ["turning"],
        ["rigidity"],
    ]
    certs = []
    for step in steps:
        sub = out / step[0]
        code = main(step + ["--seed", str(seed), "--out", str(sub), "--threads", str(threads)], quiet=True)
        if code != EXIT_OK:
            raise InvariantViolation(f"pipeline step {step[0]} exited with {code}")
        if step[0] == "gen":
            (out / "instance.cbl").write_bytes((sub / "instance.cbl").read_bytes())
        certs.append(sub / "certificate.json")
    meta = {"identity": {"tool": "cbl", "version": __version__, "command": "pipeline"}, "master_seed": seed}
    files = sorted(p for p in out.rglob("*") if p.is_file() and (p.name != "certificate.json" or p in certs))
    cert = st.emit_certificate(meta, files, out)
    cert.write(out / "certificate.json")
    return files + [out / "certificate.json"]


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker cap for parallel loops")
    common.add_argument("--format", choices=["csv"], default="csv")

    p = argparse.ArgumentParser(prog="cbl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate an instance")
    g.add_argument("--family", choices=["kcbs", "mermin", "chain", "random", "adhoc", "mixture"], default="kcbs")
    g.add_argument("--n", type=int, default=5)
    g.add_argument("--vars", type=int, default=10)
    g.add_argument("--contexts", type=int, default=6)
    g.add_argument("--overlap", type=int, default=1)
    g.add_argument("--curved", action="store_true")
    g.add_argument("--p", type=float, default=0.5)
    g.add_argument("--length", type=int, default=240)
    g.add_argument("--name", default="instance.cbl")
    g.set_defaults(func=cmd_gen)

    def with_instance(name, func, help_):
        q = sub.add_parser(name, parents=[common], help=help_)
        q.add_argument("instance")
        q.set_defaults(func=func)
        return q

    with_instance("solve", cmd_solve, "solve with CBL-Solve, the baseline and tree DP").add_argument(
        "--solver", choices=["cbl", "baseline", "treewidth", "all"], default="all")
    with_instance("count", cmd_count, "count satisfying compatible families")
    with_instance("kappa", cmd_kappa, "curvature of the context system")
    with_instance("cores", cmd_cores, "list minimal curved cores").add_argument("--max-size", type=int, default=8)
    with_instance("ac", cmd_ac, "CBL-AC versus classical AC").add_argument("--max-size", type=int, default=8)
    c = with_instance("cons", cmd_cons, "CBL-CONS cut on one edge or all face edges")
    c.add_argument("--edge", help="two context ids, e.g. 0,1")
    c.add_argument("--var", type=int)
    c.add_argument("--value", type=int, choices=[0, 1], default=1)
    c.add_argument("--max-size", type=int, default=8)

    def stream_args(q):
        q.add_argument("--n", type=int, default=4096)
        q.add_argument("--eta", type=float, default=0.0)
        q.add_argument("--rho", type=float, default=0.0)
        q.add_argument("--nu", type=float, default=0.0)
        q.add_argument("--effect", type=float, default=0.0)

    s = sub.add_parser("scan", parents=[common], help="folded permutation scan with BH-FDR")
    stream_args(s)
    s.add_argument("--w", type=int, default=256)
    s.add_argument("--s", type=int, default=256)
    s.add_argument("--B", type=int, default=999)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--stat", choices=sorted(st.STATISTICS), default=st.DEFAULT_STATISTIC)
    s.set_defaults(func=cmd_scan)

    pw = sub.add_parser("power", parents=[common], help="power grid over (n, eps, rho)")
    pw.add_argument("--n-list", default="1024,4096")
    pw.add_argument("--eps-list", default="0,0.3")
    pw.add_argument("--rho-list", default="0")
    pw.add_argument("--B", type=int, default=199)
    pw.add_argument("--alpha", type=float, default=0.05)
    pw.add_argument("--reps", type=int, default=10)
    pw.add_argument("--window", type=int, default=1024)
    pw.add_argument("--eta", type=float, default=st.POWER_ETA)
    pw.set_defaults(func=cmd_power)

    def holonomy_args(q):
        q.add_argument("--families", default="chsh,kcbs,sat1,sat2")
        q.add_argument("--mix", default="0,0.25,0.5,0.75,1")
        q.add_argument("--calibrate-to", type=float, default=hol.FAMILY_TABLE["chsh"])
        q.add_argument("--gate-law", choices=sorted(hol.GATE_LAWS), default=hol.DEFAULT_GATE_LAW)

    h = sub.add_parser("holonomy", parents=[common], help="intercept tables under one calibration")
    holonomy_args(h)
    h.set_defaults(func=cmd_holonomy)
    f = sub.add_parser("falsify", parents=[common], help="six-row falsification matrix")
    holonomy_args(f)
    f.set_defaults(func=cmd_falsify)

    t = sub.add_parser("turning", parents=[common], help="vertex-turning law versus the matrix oracle")
    t.add_argument("--n-max", type=int, default=12)
    t.add_argument("--delta", type=float, default=0.1)
    t.set_defaults(func=cmd_turning)

    r = sub.add_parser("rigidity", parents=[common], help="variational recovery of the face angle")
    r.add_argument("--theta", type=float, default=0.2)
    r.add_argument("--L0", type=int, default=2400)
    r.set_defaults(func=cmd_rigidity)

    ce = sub.add_parser("certify", parents=[common], help="provenance certificate over files")
    ce.add_argument("artifacts", nargs="+")
    ce.set_defaults(func=cmd_certify)

    pl = sub.add_parser("pipeline", parents=[common], help="full reproducible run")
    pl.set_defaults(func=None)
    return p


def main(argv: list[str] | None = None, quiet: bool = False) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "pipeline":
            run_pipeline(args.out, args.seed, args.threads)
            print(Path(args.out) / "certificate.json")
            return EXIT_OK
        run = Run(args)
        if quiet:
            with contextlib.redirect_stdout(io.StringIO()):
                args.func(run)
        else:
            args.func(run)
        run.seal()
    except InvariantViolation as e:
        print(f"cbl: invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (CBLInputError, FileNotFoundError) as e:
        print(f"cbl: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
