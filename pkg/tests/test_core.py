from itertools import product

import pytest
from hypothesis import given, strategies as st

from cbl.core import (
    CompatibleFamily, ContextSystem, LocalValuation, check_overlap, contextual_faces, curved_cores, flat_by_enumeration,
    flatten, global_sections_exist, gf2_rank, is_compatible, kappa, kappa_of_contexts, restrict,
)
from cbl.errors import CBLInputError, CurvatureError
from cbl.instances import gen_chain, gen_kcbs, gen_mermin


def _naive_rank(rows, width):
    # row reduction on explicit bit lists
    m = [[(r >> b) & 1 for b in range(width)] for r in rows]
    rank, col = 0, 0
    while rank < len(m) and col < width:
        piv = next((i for i in range(rank, len(m)) if m[i][col]), None)
        if piv is None:
            col += 1
            continue
        m[rank], m[piv] = m[piv], m[rank]
        for i in range(len(m)):
            if i != rank and m[i][col]:
                m[i] = [a ^ b for a, b in zip(m[i], m[rank])]
        rank += 1
        col += 1
    return rank


@given(st.lists(st.integers(0, 2**10 - 1), max_size=12))
def test_gf2_rank_matches_row_reduction(rows):
    assert gf2_rank(rows) == _naive_rank(rows, 10)


@st.composite
def systems(draw, max_vars=8, max_ctx=4):
    n = draw(st.integers(1, max_vars))
    k = draw(st.integers(1, max_ctx))
    ctxs = set()
    for _ in range(k):
        ctxs.add(tuple(sorted(draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n)))))
    covered = set().union(*ctxs)
    extra = tuple(sorted(set(range(n)) - covered))
    if extra:
        ctxs.add(extra)
    return ContextSystem(n, tuple(sorted(ctxs)))


@given(systems())
def test_kappa_zero_iff_every_twist_glues(sys):
    assert (kappa(sys).kappa == 0) == flat_by_enumeration(sys)


def test_canonical_values():
    assert kappa(gen_kcbs(5).system).kappa == 1
    assert kappa(gen_mermin().system).kappa >= 1
    assert kappa(gen_chain().system).kappa == 0
    assert [c.context_ids for c in curved_cores(gen_kcbs(5).system)] == [(0, 1, 2, 3, 4)]


def test_triangle_with_common_point_is_flat():
    # three pairwise overlaps that share one variable fill the triangle
    assert kappa_of_contexts([(0, 1), (0, 2), (0, 3)]).kappa == 0
    assert kappa_of_contexts([(0, 1), (1, 2), (2, 0)]).kappa == 1


def test_cores_are_minimal():
    sys = gen_mermin().system
    cores = curved_cores(sys)
    assert cores
    for c in cores:
        ids = c.context_ids
        assert kappa_of_contexts([sys.contexts[i] for i in ids]).kappa > 0
        for drop in ids:
            rest = [sys.contexts[i] for i in ids if i != drop]
            assert kappa_of_contexts(rest).kappa == 0


def test_context_system_validation():
    with pytest.raises(CBLInputError):
        ContextSystem(3, ((0, 1),))
    with pytest.raises(CBLInputError):
        ContextSystem(2, ((0, 2),))
    with pytest.raises(CBLInputError):
        ContextSystem(2, ((0, 1), (1, 0)))


def test_overlap_and_compatibility():
    sys = ContextSystem(3, ((0, 1), (1, 2)))
    good = restrict((1, 0, 1), sys)
    assert is_compatible(good, sys)
    assert global_sections_exist(sys, good).bits == (1, 0, 1)
    bad = CompatibleFamily((LocalValuation(0, {0: 1, 1: 0}), LocalValuation(1, {1: 1, 2: 1})))
    assert not is_compatible(bad, sys)
    assert not check_overlap(bad.locals[0], bad.locals[1], {1})
    with pytest.raises(CBLInputError):
        check_overlap(bad.locals[0], bad.locals[1], {2})


@given(systems(max_vars=6, max_ctx=3), st.data())
def test_restrict_then_flatten_roundtrips(sys, data):
    bits = tuple(data.draw(st.lists(st.integers(0, 1), min_size=sys.num_vars, max_size=sys.num_vars)))
    fam = restrict(bits, sys)
    assert is_compatible(fam, sys)
    if kappa(sys).kappa == 0:
        assert flatten(sys, fam).bits == bits


def test_flatten_refuses_curved():
    sys = gen_kcbs(5).system
    with pytest.raises(CurvatureError):
        flatten(sys, restrict((0,) * 5, sys))


def test_filled_core_is_not_a_face():
    # a triangle coned off by a context containing all three variables
    sys = ContextSystem(3, ((0, 1), (1, 2), (0, 2), (0, 1, 2)))
    assert kappa(sys).kappa == 0
    assert curved_cores(sys)
    assert contextual_faces(sys) == []
    assert contextual_faces(gen_kcbs(5).system) == curved_cores(gen_kcbs(5).system)


@given(systems())
def test_faces_exist_iff_curved(sys):
    assert (kappa(sys).kappa > 0) == bool(contextual_faces(sys))
