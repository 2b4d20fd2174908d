"""Prime-field arithmetic.

Field elements are plain Python ints kept in ``[0, p)``.  The vector helpers at
the bottom work on numpy arrays and are what the candidate-matrix code uses.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, ZeroInverse

FieldElement = int

DEFAULT_P = 65537

# Largest modulus for which (p-1)**2 still fits in int64.
_INT64_SAFE = 3_037_000_499


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class FieldCtx:
    p: int = DEFAULT_P

    def __post_init__(self):
        if not isinstance(self.p, int) or self.p <= 2:
            raise ConfigError(f"field modulus must be an integer > 2, got {self.p!r}")
        if self.p >= 2**32:
            raise ConfigError("field modulus must be below 2**32")
        if not is_prime(self.p):
            raise ConfigError(f"{self.p} is not prime")

    def __call__(self, value: int) -> FieldElement:
        return value % self.p

    @cached_property
    def dtype(self):
        return np.int64 if self.p < _INT64_SAFE else object

    @cached_property
    def inverse_table(self):
        """``table[a] = a**-1 mod p`` for small fields (``table[0]`` is 0); None otherwise."""
        if self.p > 1 << 22:
            return None
        a = np.arange(self.p, dtype=np.int64)
        return np_pow(a, self.p - 2, self)

    def inv_array(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=self.dtype) % self.p
        if np.any(a == 0):
            raise ZeroInverse("0 has no multiplicative inverse")
        table = self.inverse_table
        if table is not None:
            return table[a]
        return np.array([pow(int(v), -1, self.p) for v in a.ravel()], dtype=self.dtype).reshape(a.shape)

    def array(self, values) -> np.ndarray:
        return np.asarray(values, dtype=self.dtype) % self.p


def ff_add(a: FieldElement, b: FieldElement, ctx: FieldCtx) -> FieldElement:
    return (a + b) % ctx.p


def ff_sub(a: FieldElement, b: FieldElement, ctx: FieldCtx) -> FieldElement:
    return (a - b) % ctx.p


def ff_mul(a: FieldElement, b: FieldElement, ctx: FieldCtx) -> FieldElement:
    return (a * b) % ctx.p


def ff_inv(a: FieldElement, ctx: FieldCtx) -> FieldElement:
    """Inverse by the extended Euclidean algorithm."""
    a %= ctx.p
    if a == 0:
        raise ZeroInverse("0 has no multiplicative inverse")
    old_r, r = a, ctx.p
    old_s, s = 1, 0
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
    return old_s % ctx.p


def ff_div(a: FieldElement, b: FieldElement, ctx: FieldCtx) -> FieldElement:
    return (a * ff_inv(b, ctx)) % ctx.p


def poly_eval_horner(coeffs: Sequence[FieldElement], x: FieldElement, ctx: FieldCtx) -> FieldElement:
    """Evaluate a polynomial given highest-degree coefficient first.

    Folding left to right is exactly the chain of per-router updates
    ``y <- y*x + r``, so ``poly_eval_horner(path.nodes, x)`` is the y-value a
    source-initiated mark carries at the destination.
    """
    if len(coeffs) == 0:
        raise ValueError("empty coefficient list")
    p = ctx.p
    y = 0
    for c in coeffs:
        y = (y * x + c) % p
    return y


# -- vectorised helpers -------------------------------------------------------

def np_pow(base: np.ndarray, exp: int, ctx: FieldCtx) -> np.ndarray:
    """Elementwise ``base**exp mod p`` by square-and-multiply."""
    p = ctx.p
    base = np.asarray(base, dtype=ctx.dtype) % p
    result = np.ones_like(base)
    e = int(exp)
    while e:
        if e & 1:
            result = result * base % p
        base = base * base % p
        e >>= 1
    return result


def np_inv(a: np.ndarray, ctx: FieldCtx) -> np.ndarray:
    a = np.asarray(a, dtype=ctx.dtype) % ctx.p
    if np.any(a == 0):
        raise ZeroInverse("0 has no multiplicative inverse")
    return np_pow(a, ctx.p - 2, ctx)


def np_horner(coeffs: np.ndarray, x: np.ndarray, ctx: FieldCtx) -> np.ndarray:
    """Horner evaluation vectorised over a batch.

    ``coeffs`` has shape ``(..., n)`` (highest degree first) and ``x`` has shape
    ``(..., l)``; the result has the shape of ``x``.
    """
    p = ctx.p
    coeffs = np.asarray(coeffs, dtype=ctx.dtype)
    x = np.asarray(x, dtype=ctx.dtype)
    y = np.zeros(np.broadcast_shapes(coeffs.shape[:-1] + (1,), x.shape), dtype=ctx.dtype)
    for i in range(coeffs.shape[-1]):
        y = (y * x + coeffs[..., i:i + 1]) % p
    return y
