import numpy as np
import pytest
from hypothesis import given, strategies as st

from algtrace.errors import ConfigError, ZeroInverse
from algtrace.field import (FieldCtx, ff_add, ff_div, ff_inv, ff_mul, ff_sub, is_prime, np_horner,
                            np_inv, np_pow, poly_eval_horner)

P = 65537
elem = st.integers(0, P - 1)
nonzero = st.integers(1, P - 1)
CTX = FieldCtx(P)


@pytest.mark.parametrize("a,b,p,want", [(0, 7, 11, 7), (3, 10, 11, 2), (65536, 1, 65537, 0)])
def test_add_examples(a, b, p, want):
    assert ff_add(a, b, FieldCtx(p)) == want


@pytest.mark.parametrize("a,b,p,want", [(1, 9, 11, 9), (4, 3, 11, 1), (256, 256, 65537, 65536)])
def test_mul_examples(a, b, p, want):
    assert ff_mul(a, b, FieldCtx(p)) == want


@pytest.mark.parametrize("a,p,want", [(1, 11, 1), (4, 11, 3), (2, 65537, 32769)])
def test_inv_examples(a, p, want):
    assert ff_inv(a, FieldCtx(p)) == want


def test_inverse_matches_brute_force_scan(f11):
    for a in range(1, 11):
        want = next(b for b in range(11) if a * b % 11 == 1)
        assert ff_inv(a, f11) == want


def test_zero_has_no_inverse(f11):
    with pytest.raises(ZeroInverse):
        ff_inv(0, f11)
    with pytest.raises(ZeroDivisionError):
        ff_div(3, 0, f11)
    with pytest.raises(ZeroInverse):
        f11.inv_array([1, 0])


@pytest.mark.parametrize("p", [1, 2, 9, 65536, 2**32 + 15])
def test_bad_modulus(p):
    with pytest.raises(ConfigError):
        FieldCtx(p)


def test_is_prime_small():
    assert [n for n in range(30) if is_prime(n)] == [2, 3, 5, 7, 11, 13, 17, 19, 23, 29]


@pytest.mark.parametrize("coeffs,x,want", [([5], 9, 5), ([3, 5, 2], 4, 4), ([3, 7, 5, 2], 2, 9)])
def test_horner_examples(coeffs, x, want, f11):
    assert poly_eval_horner(coeffs, x, f11) == want


def test_horner_rejects_empty(f11):
    with pytest.raises(ValueError):
        poly_eval_horner([], 1, f11)


@given(elem, elem, elem)
def test_ring_axioms(a, b, c):
    assert ff_add(a, b, CTX) == ff_add(b, a, CTX)
    assert ff_mul(a, b, CTX) == ff_mul(b, a, CTX)
    assert ff_add(ff_add(a, b, CTX), c, CTX) == ff_add(a, ff_add(b, c, CTX), CTX)
    assert ff_mul(ff_mul(a, b, CTX), c, CTX) == ff_mul(a, ff_mul(b, c, CTX), CTX)
    assert ff_mul(a, ff_add(b, c, CTX), CTX) == ff_add(ff_mul(a, b, CTX), ff_mul(a, c, CTX), CTX)
    assert ff_add(ff_sub(a, b, CTX), b, CTX) == a
    assert ff_add(a, 0, CTX) == a and ff_mul(a, 1, CTX) == a


@given(nonzero, elem)
def test_inverse_and_division(a, b):
    assert ff_mul(a, ff_inv(a, CTX), CTX) == 1
    assert ff_mul(ff_div(b, a, CTX), a, CTX) == b
    assert ff_inv(a, CTX) == pow(a, P - 2, P)


@given(st.lists(elem, min_size=1, max_size=30), elem)
def test_horner_matches_power_sum(coeffs, x):
    n = len(coeffs)
    direct = sum(c * pow(x, n - 1 - i, P) for i, c in enumerate(coeffs)) % P
    assert poly_eval_horner(coeffs, x, CTX) == direct


@given(st.lists(elem, min_size=1, max_size=12), st.lists(elem, min_size=1, max_size=5))
def test_vector_horner_matches_scalar(coeffs, xs):
    got = np_horner(np.array([coeffs]), np.array([xs]), CTX)[0]
    assert [int(v) for v in got] == [poly_eval_horner(coeffs, x, CTX) for x in xs]


@given(st.lists(nonzero, min_size=1, max_size=10), st.integers(0, 70000))
def test_vector_pow_and_inverse(xs, e):
    a = np.array(xs)
    assert [int(v) for v in np_pow(a, e, CTX)] == [pow(x, e, P) for x in xs]
    assert [int(v) for v in np_inv(a, CTX)] == [ff_inv(x, CTX) for x in xs]
    assert [int(v) for v in CTX.inv_array(a)] == [ff_inv(x, CTX) for x in xs]


def test_large_field_uses_object_arrays():
    big = FieldCtx(4294967291)
    assert big.dtype is object and big.inverse_table is None
    a = np.array([2, 4294967290], dtype=object)
    assert [int(v) for v in big.inv_array(a)] == [pow(2, -1, big.p), big.p - 1]
    assert np_horner(np.array([[1, 1]], dtype=object), a[None], big)[0].tolist() == [3, 0]
