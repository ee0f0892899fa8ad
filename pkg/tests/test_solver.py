from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from cbl.errors import CapacityError
from cbl.instances import CblInstance, gen_chain, gen_kcbs, gen_mermin, gen_random, random_corpus
from cbl.solver import (
    SAT, UNSAT, baseline_solve, cbl_solve, check_witness, count_compatible, flattened_cnf,
)


def brute_force(inst: CblInstance) -> int:
    """Count global assignments satisfying every clause (pure Python)."""
    n = inst.num_vars
    total = 0
    for bits in product((0, 1), repeat=n):
        if all(cl.satisfied_by(lambda v: bits[v]) for cl in inst.clauses):
            total += 1
    return total


def test_kcbs_trace_follows_the_overlap_chain():
    r = cbl_solve(gen_kcbs(5), trace=True)
    assert r.status == UNSAT
    head = [(c, v, b, why[0]) for c, v, b, why in r.trace[:10]]
    assert head[0] == (0, 0, 1, "decision")
    assert head[1] == (0, 1, 0, "unit")
    assert head[2] == (1, 1, 0, "transport")
    assert head[-1] == (4, 0, 0, "unit")
    # the conflict is between C4's copy of x0 and the decision in C0
    cut = r.cuts[0]
    assert cut.source == (0, 4) and cut.overlap_vars == (0,)
    assert r.stats.unsat_detection_depth == 1


@pytest.mark.parametrize("make,status", [
    (lambda: gen_kcbs(5), UNSAT), (gen_mermin, UNSAT), (gen_chain, SAT),
    (lambda: gen_mermin(flip_last_column=False), SAT),
])
def test_canonical_statuses(make, status):
    inst = make()
    for solver in (cbl_solve, baseline_solve):
        res = solver(inst)
        assert res.status == status
        if status == SAT:
            assert check_witness(inst, res.witness)


def test_learned_cuts_are_sound():
    # a cut may only forbid assignments that extend to no model
    for inst in random_corpus(80, seed=9, max_vars=9):
        res = cbl_solve(inst)
        models = [
            bits for bits in product((0, 1), repeat=inst.num_vars)
            if all(cl.satisfied_by(lambda v: bits[v]) for cl in inst.clauses)
        ]
        for cut in res.cuts:
            assert not any(cut.blocks(lambda v: m[v]) for m in models)


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.booleans(), st.integers(4, 10))
def test_solvers_agree_with_enumeration(seed, curved, nv):
    inst = gen_random(max(nv, 5), 5 if curved else 3, 2, curved, seed)
    n_models = brute_force(inst)
    want = SAT if n_models else UNSAT
    assert count_compatible(inst) == n_models
    for solver in (cbl_solve, baseline_solve):
        res = solver(inst)
        assert res.status == want
        if want == SAT:
            assert check_witness(inst, res.witness)


def test_flattened_cnf_has_overlap_biconditionals():
    inst = gen_chain()
    index, cnf = flattened_cnf(inst)
    shared = [v for v in range(inst.num_vars) if len(inst.system.contexts_of(v)) == 2]
    assert len(index) == sum(len(c) for c in inst.system.contexts)
    assert len(cnf) == len(inst.clauses) + 2 * len(shared)


def test_count_refuses_large_instances():
    inst = gen_random(30, 12, 2, False, 0)
    with pytest.raises(CapacityError):
        count_compatible(inst)


def test_model_counts_match_table():
    assert count_compatible(gen_kcbs(5)) == 0
    assert count_compatible(gen_mermin()) == 0
