import pytest
from hypothesis import given, strategies as st

from cbl.core import kappa
from cbl.errors import CBLInputError, ParseError
from cbl.instances import (
    Clause, face_count, gen_adhoc, gen_chain, gen_kcbs, gen_mermin, gen_mixture, gen_random,
    mixture_density, parse, random_corpus, serialize,
)
from cbl.solver import UNSAT, cbl_solve, count_compatible


def test_canonical_generators():
    k = gen_kcbs(5)
    assert k.num_vars == 5 and len(k.system) == 5
    assert count_compatible(k) == 0
    m = gen_mermin()
    assert count_compatible(m) == 0
    assert count_compatible(gen_mermin(flip_last_column=False)) > 0
    assert count_compatible(gen_chain()) > 0


@given(st.integers(0, 10**6), st.booleans())
def test_serialize_roundtrip(seed, curved):
    inst = gen_random(8, 5, 2, curved, seed)
    back = parse(serialize(inst))
    assert back == inst
    assert serialize(back) == serialize(inst)


def test_corpus_roundtrip_and_determinism():
    a = random_corpus(30, seed=4)
    b = random_corpus(30, seed=4)
    assert [serialize(i) for i in a] == [serialize(i) for i in b]
    for inst in a:
        assert parse(serialize(inst)) == inst


def test_curved_generator_is_curved_and_unsat():
    for seed in range(10):
        inst = gen_random(9, 6, 2, True, seed)
        assert kappa(inst.system).kappa > 0
        assert cbl_solve(inst).status == UNSAT


def test_flat_generator_is_flat():
    for seed in range(10):
        assert kappa(gen_random(9, 4, 2, False, seed).system).kappa == 0


def test_adhoc_is_reproducible():
    assert serialize(gen_adhoc(6, 3, 11)) == serialize(gen_adhoc(6, 3, 11))


@pytest.mark.parametrize("text,line,col", [
    ("p cbl 2 1 1\nx 0 1 2 0\n1 3 0 @ 0\n", 3, 3),
    ("x 0 1 0\n", 1, 1),
    ("p cbl 2 1 1\nx 0 1 2 0\n1 2 0 @ 4\n", 3, 9),
    ("p cbl 2 1 1\nx 0 1 2 0\n1 q 0 @ 0\n", 3, 3),
    ("p cbl 2 0 1\nx 0 1 2 0\np cbl 2 0 1\n", 3, 1),
])
def test_parse_errors_carry_position(text, line, col):
    with pytest.raises(ParseError) as e:
        parse(text)
    assert e.value.line == line
    assert e.value.column == col


def test_parse_rejects_literal_outside_context():
    with pytest.raises(ParseError):
        parse("p cbl 3 1 2\nx 0 1 2 0\nx 1 2 3 0\n3 0 @ 0\n")


def test_clause_validation():
    with pytest.raises(CBLInputError):
        Clause((0,), 0)


def test_mixture_density():
    assert mixture_density(0.0) == gen_mixture(0.0, 120).meta.rho_face
    assert mixture_density(0.5) > mixture_density(0.0)
    inst = gen_mixture(0.5, 240)
    assert face_count(inst) >= 1
