"""Depth at which each solver proves UNSAT on KCBS-n cycles and planted-core instances.

Measured and logged only; no ordering is asserted.
"""

import argparse
import csv
import sys

from cbl.instances import gen_kcbs, gen_random
from cbl.operators import solve_with_propagation
from cbl.solver import baseline_solve, cbl_solve


def rows(seeds: int):
    cases = [(f"kcbs-{n}", gen_kcbs(n)) for n in (5, 7, 9, 11)]
    cases += [(f"planted-{s}", gen_random(12, 7, 1, True, s)) for s in range(seeds)]
    for name, inst in cases:
        c = cbl_solve(inst)
        b = baseline_solve(inst)
        p, _ = solve_with_propagation(inst)
        yield [name, c.status, c.stats.unsat_detection_depth, c.stats.decisions,
               b.stats.unsat_detection_depth, b.stats.decisions, p.stats.unsat_detection_depth]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    a = ap.parse_args()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["instance", "status", "cbl_depth", "cbl_decisions", "baseline_depth", "baseline_decisions",
                "cbl_ac_depth"])
    for r in rows(a.seeds):
        w.writerow(r)


if __name__ == "__main__":
    main()
