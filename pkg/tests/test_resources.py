from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from coalsim.resources import (
    NegativeResourceError,
    ResourceVector,
    approx_equal,
    format_quantity,
    resource_add,
    resource_leq,
    resource_sub,
    vector_sum,
)

from conftest import rv

quantities = st.fractions(min_value=0, max_value=10**6)
vectors = st.builds(ResourceVector, quantities, quantities, quantities, quantities)


def test_add_identity():
    assert resource_add(rv(1, 2, 3, 4), rv()) == rv(1, 2, 3, 4)


def test_sub_componentwise():
    assert resource_sub(rv(5, 5, 5, 5), rv(1, 2, 3, 4)) == rv(4, 3, 2, 1)


def test_leq_fails_on_single_component():
    assert not resource_leq(rv(1, 9, 1, 1), rv(2, 2, 2, 2))


def test_sub_negative_component_raises():
    with pytest.raises(NegativeResourceError):
        resource_sub(rv(1, 0, 0, 0), rv(2, 0, 0, 0))


def test_construction_rejects_negative():
    with pytest.raises(NegativeResourceError):
        rv(-1)


def test_decimal_strings_parse_exactly():
    v = ResourceVector("0.1", "0.2", 0, 0)
    assert v.compute == Fraction(1, 10)
    assert v.memory == Fraction(1, 5)


@given(vectors, vectors)
def test_add_then_leq(a, b):
    assert resource_leq(a, resource_add(a, b))


@given(vectors, vectors)
def test_add_sub_round_trip_is_exact(a, b):
    assert resource_sub(resource_add(a, b), b) == a


@given(vectors, vectors, vectors)
def test_sum_is_order_independent(a, b, c):
    assert vector_sum([a, b, c]) == vector_sum([c, a, b])


def test_approx_equal_tolerance():
    assert approx_equal(1, Fraction(1) + Fraction(1, 10**10))
    assert not approx_equal(1, 1 + Fraction(1, 10**8))


@pytest.mark.parametrize(
    "value,expected",
    [
        (Fraction(5), "5"),
        (Fraction(5, 2), "2.5"),
        (Fraction(10, 3), "10/3"),
        (Fraction(1, 8), "0.125"),
        (float("inf"), "unbounded"),
        (Fraction(-3, 4), "-0.75"),
    ],
)
def test_format_quantity(value, expected):
    assert format_quantity(value) == expected
