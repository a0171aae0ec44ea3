"""Forward-mode automatic differentiation on tagged dual numbers.

Every quantity in the controller recursion is evaluated in an algebra of
``Dual`` objects carrying a value and a tuple of first-order sensitivities.
Nesting is supported through tags: a derivative taken inside another
derivative computation creates a fresh (higher) tag, and arithmetic always
dispatches on the highest tag present, treating lower-tagged operands as
constants.  This gives exact higher-order mixed partials without symbolic
work and without finite differences.

Performance notes (this module sits on the hot path of every simulation
step):

* payloads may be plain floats or numpy arrays, which lets a caller batch
  many evaluation points (e.g. quadrature nodes) through one pass;
* multiplying by an exact float ``0.0`` collapses to ``0.0`` -- sound for
  value-and-derivative algebra since ``0 * f`` is identically zero -- so
  structurally absent terms cost nothing;
* sensitivity tuples store exact float zeros for dead directions and all
  combining helpers skip them.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Dual",
    "fresh_tag",
    "seed",
    "value_of",
    "partials_of",
    "value_and_gradient",
    "value_and_jacobian",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
]

_tag_counter = 0


def fresh_tag() -> int:
    """Return a new, strictly increasing derivative tag."""
    global _tag_counter
    _tag_counter += 1
    return _tag_counter


def _is_zero(v) -> bool:
    return type(v) is float and v == 0.0


# exact-zero checks are inlined in the comprehensions below: these helpers
# run hundreds of thousands of times per simulated second

def _eps_add(a: tuple, b: tuple) -> tuple:
    return tuple(
        [
            y if (type(x) is float and x == 0.0)
            else (x if (type(y) is float and y == 0.0) else x + y)
            for x, y in zip(a, b)
        ]
    )


def _eps_sub(a: tuple, b: tuple) -> tuple:
    return tuple(
        [
            (0.0 if (type(y) is float and y == 0.0) else -y)
            if (type(x) is float and x == 0.0)
            else (x if (type(y) is float and y == 0.0) else x - y)
            for x, y in zip(a, b)
        ]
    )


def _eps_scale(e: tuple, c) -> tuple:
    return tuple(
        [0.0 if (type(x) is float and x == 0.0) else x * c for x in e]
    )


def _eps_neg(e: tuple) -> tuple:
    return tuple(
        [0.0 if (type(x) is float and x == 0.0) else -x for x in e]
    )


class Dual:
    """A first-order jet: value plus sensitivities for one tag."""

    __slots__ = ("tag", "val", "eps")
    # Keep numpy from trying to broadcast over us elementwise.
    __array_ufunc__ = None

    def __init__(self, tag: int, val, eps: tuple):
        self.tag = tag
        self.val = val
        self.eps = eps

    def __repr__(self) -> str:
        return f"Dual(tag={self.tag}, val={self.val!r}, eps={self.eps!r})"

    # -- addition ---------------------------------------------------------
    def __add__(self, o):
        if type(o) is Dual:
            if o.tag == self.tag:
                return Dual(self.tag, self.val + o.val, _eps_add(self.eps, o.eps))
            if o.tag < self.tag:
                return Dual(self.tag, self.val + o, self.eps)
            return Dual(o.tag, self + o.val, o.eps)
        return Dual(self.tag, self.val + o, self.eps)

    __radd__ = __add__

    # -- subtraction ------------------------------------------------------
    def __sub__(self, o):
        if type(o) is Dual:
            if o.tag == self.tag:
                return Dual(self.tag, self.val - o.val, _eps_sub(self.eps, o.eps))
            if o.tag < self.tag:
                return Dual(self.tag, self.val - o, self.eps)
            return Dual(o.tag, self - o.val, o.eps)
        return Dual(self.tag, self.val - o, self.eps)

    def __rsub__(self, o):
        return Dual(self.tag, o - self.val, _eps_neg(self.eps))

    def __neg__(self):
        return Dual(self.tag, -self.val, _eps_neg(self.eps))

    # -- multiplication ---------------------------------------------------
    def __mul__(self, o):
        if type(o) is Dual:
            if o.tag == self.tag:
                sv, ov = self.val, o.val
                return Dual(
                    self.tag,
                    sv * ov,
                    tuple(
                        [
                            (0.0 if (type(y) is float and y == 0.0) else y * sv)
                            if (type(x) is float and x == 0.0)
                            else (
                                x * ov
                                if (type(y) is float and y == 0.0)
                                else x * ov + y * sv
                            )
                            for x, y in zip(self.eps, o.eps)
                        ]
                    ),
                )
            if o.tag < self.tag:
                return Dual(self.tag, self.val * o, _eps_scale(self.eps, o))
            return Dual(o.tag, self * o.val, _eps_scale(o.eps, self))
        if type(o) is float or type(o) is int:
            if o == 0.0:
                return 0.0
            return Dual(self.tag, self.val * o, _eps_scale(self.eps, o))
        # ndarray constant
        return Dual(self.tag, self.val * o, _eps_scale(self.eps, o))

    __rmul__ = __mul__

    # -- division ---------------------------------------------------------
    # the value lane divides directly (bit-identical to plain evaluation);
    # reciprocals only ever scale the derivative lane
    def __truediv__(self, o):
        if type(o) is Dual:
            if o.tag == self.tag:
                inv = 1.0 / o.val
                q = self.val / o.val
                return Dual(
                    self.tag,
                    q,
                    tuple(
                        (0.0 if _is_zero(y) else -q * y * inv)
                        if _is_zero(x)
                        else ((x - q * y) * inv if not _is_zero(y) else x * inv)
                        for x, y in zip(self.eps, o.eps)
                    ),
                )
            if o.tag < self.tag:
                return Dual(self.tag, self.val / o, _eps_scale(self.eps, 1.0 / o))
            inv = 1.0 / o.val
            q = self / o.val
            return Dual(o.tag, q, _eps_scale(o.eps, -q * inv))
        return Dual(self.tag, self.val / o, _eps_scale(self.eps, 1.0 / o))

    def __rtruediv__(self, o):
        inv = 1.0 / self.val
        q = o / self.val
        return Dual(self.tag, q, _eps_scale(self.eps, -q * inv))

    # -- powers -----------------------------------------------------------
    def __pow__(self, p):
        if p == 2:
            two_v = 2.0 * self.val
            return Dual(self.tag, self.val * self.val, _eps_scale(self.eps, two_v))
        v = self.val**p
        return Dual(self.tag, v, _eps_scale(self.eps, p * self.val ** (p - 1)))


def seed(args, tag: int | None = None):
    """Wrap ``args`` as independent variables of a (new) tag.

    Returns ``(tag, seeded)`` where ``seeded[i]`` carries a unit
    sensitivity in direction ``i``.
    """
    if tag is None:
        tag = fresh_tag()
    k = len(args)
    units = _unit_cache(k)
    return tag, [Dual(tag, a, units[i]) for i, a in enumerate(args)]


_UNITS: dict[int, tuple] = {}


def _unit_cache(k: int):
    got = _UNITS.get(k)
    if got is None:
        got = tuple(tuple(1.0 if j == i else 0.0 for j in range(k)) for i in range(k))
        _UNITS[k] = got
    return got


def value_of(x):
    """Strip every dual layer, returning the underlying float/array."""
    while type(x) is Dual:
        x = x.val
    return x


def partials_of(y, tag: int, k: int) -> tuple:
    """Sensitivities of ``y`` w.r.t. the ``k`` seeds of ``tag``.

    Quantities untouched by the seeds come back as exact zeros.
    """
    if type(y) is Dual and y.tag == tag:
        return y.eps
    return (0.0,) * k


def strip_tag(y, tag: int):
    """Value of ``y`` with layer ``tag`` removed (other tags intact)."""
    if type(y) is Dual and y.tag == tag:
        return y.val
    return y


def value_and_gradient(f, args):
    """Evaluate ``f(*args)`` together with its gradient.

    ``f`` must be composed of arithmetic supported by the dual algebra.
    ``args`` may themselves be duals of outer tags; the returned value and
    partials then live in the caller's algebra.
    """
    tag, seeded = seed(tuple(args))
    y = f(*seeded)
    return strip_tag(y, tag), partials_of(y, tag, len(seeded))


def value_and_jacobian(f, args):
    """Like :func:`value_and_gradient` for an ``f`` returning a sequence.

    Returns ``(values, rows)`` where ``rows[c]`` holds the partials of
    output component ``c``.
    """
    tag, seeded = seed(tuple(args))
    out = f(*seeded)
    k = len(seeded)
    vals = tuple(strip_tag(y, tag) for y in out)
    rows = tuple(partials_of(y, tag, k) for y in out)
    return vals, rows


# -- elementary functions --------------------------------------------------


def sin(x):
    if type(x) is Dual:
        return Dual(x.tag, sin(x.val), _eps_scale(x.eps, cos(x.val)))
    if type(x) is float or type(x) is int:
        return math.sin(x)
    return np.sin(x)


def cos(x):
    if type(x) is Dual:
        return Dual(x.tag, cos(x.val), _eps_scale(x.eps, -sin(x.val)))
    if type(x) is float or type(x) is int:
        return math.cos(x)
    return np.cos(x)


def exp(x):
    if type(x) is Dual:
        v = exp(x.val)
        return Dual(x.tag, v, _eps_scale(x.eps, v))
    if type(x) is float or type(x) is int:
        return math.exp(x)
    return np.exp(x)


def log(x):
    if type(x) is Dual:
        return Dual(x.tag, log(x.val), _eps_scale(x.eps, 1.0 / x.val))
    if type(x) is float or type(x) is int:
        return math.log(x)
    return np.log(x)


def sqrt(x):
    if type(x) is Dual:
        v = sqrt(x.val)
        return Dual(x.tag, v, _eps_scale(x.eps, 0.5 / v))
    if type(x) is float or type(x) is int:
        return math.sqrt(x)
    return np.sqrt(x)
