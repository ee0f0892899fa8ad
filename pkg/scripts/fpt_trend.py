"""Solve time with CBL-AC preprocessing versus instance size, for k planted cores.

The face inventory is the planted pentagons, each checked to be curved.
Logs a measured trend with a log-log slope per k; nothing is asserted.
"""

import argparse
import csv
import sys
import time

import numpy as np

from cbl.core import ContextSystem, CurvedCore, kappa_of_contexts
from cbl.instances import CblInstance, Clause, InstanceMeta, gen_kcbs, gen_random
from cbl.operators import solve_with_propagation


def with_cores(base: CblInstance, k: int) -> tuple[CblInstance, list[CurvedCore]]:
    """Attach ``k`` disjoint KCBS pentagons, each linked to ``base`` by one clause-free context."""
    contexts = list(base.system.contexts)
    clauses = list(base.clauses)
    nv = base.num_vars
    faces = []
    for j in range(k):
        pent = gen_kcbs(5)
        shift = nv
        nv += 5
        off = len(contexts)
        faces.append(CurvedCore(tuple(range(off, off + 5))))
        for cl in pent.clauses:
            lits = tuple((abs(l) + shift) * (1 if l > 0 else -1) for l in cl.literals)
            clauses.append(Clause(lits, cl.context_id + off))
        for ctx in pent.system.contexts:
            contexts.append(tuple(v + shift for v in ctx))
        contexts.append((j % base.num_vars, shift))
    meta = InstanceMeta(name=f"{base.meta.name}+{k}cores")
    inst = CblInstance(ContextSystem(nv, tuple(contexts)), tuple(clauses), meta)
    for f in faces:
        assert kappa_of_contexts([inst.system.contexts[c] for c in f.context_ids]).kappa > 0
    return inst, faces


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="10,20,40,80")
    ap.add_argument("--reps", type=int, default=3)
    a = ap.parse_args()
    sizes = [int(s) for s in a.sizes.split(",")]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k", "size", "seconds", "status"])
    for k in (1, 2, 3):
        xs, ys = [], []
        for n in sizes:
            best, status = float("inf"), None
            for r in range(a.reps):
                inst, faces = with_cores(gen_random(n, max(2, n // 3), 2, False, 1000 * k + r), k)
                t = time.perf_counter()
                res, _ = solve_with_propagation(inst, faces)
                best = min(best, time.perf_counter() - t)
                status = res.status
            w.writerow([k, n, f"{best:.6f}", status])
            xs.append(n)
            ys.append(best)
        slope = np.polyfit(np.log(xs), np.log(ys), 1)[0]
        print(f"# k={k}: log-log slope {slope:.2f}", file=sys.stderr)


if __name__ == "__main__":
    main()
