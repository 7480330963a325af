import numpy as np
import pytest
from hypothesis import strategies as st

from onefactor.expr import Const, X, T, cos, exp, ln, sin, sqrt
from onefactor.geometry import Grid


_LEAVES = st.one_of(
    st.just(X),
    st.just(T),
    st.floats(-3, 3, allow_nan=False).map(lambda v: Const(round(v, 3))),
)


def _extend(children):
    unary = st.sampled_from([sin, cos, lambda a: exp(a / 4), lambda a: ln(1 + a * a), lambda a: sqrt(2 + sin(a)), lambda a: -a])
    binary = st.sampled_from(
        [
            lambda a, b: a + b,
            lambda a, b: a - b,
            lambda a, b: a * b,
            lambda a, b: a / (2 + cos(b)),
            lambda a, b: (1 + a * a) ** cos(b),
        ]
    )
    return st.one_of(
        st.tuples(unary, children).map(lambda p: p[0](p[1])),
        st.tuples(binary, children, children).map(lambda p: p[0](p[1], p[2])),
    )


# random expression trees of depth <= 6 on a domain-safe vocabulary
expr_trees = st.recursive(_LEAVES, _extend, max_leaves=12).filter(lambda e: _depth(e) <= 6)


def _depth(e) -> int:
    kids = e.children()
    return 1 + max((_depth(k) for k in kids), default=0)


@pytest.fixture
def small_grid():
    return Grid(-1.0, 1.0, 201, 0.0, 2.0, 201)


def fd_derivative(f, x, h=1e-4):
    """Fourth-order central difference."""
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
