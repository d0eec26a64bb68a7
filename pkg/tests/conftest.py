import numpy as np
import pytest

from dproflog import parse_program

REGION_PROGRAM = """\
locIn(X, Y) :- neighOf(X, Z), locIn(Z, Y).
neighOf(it, fr).
locIn(fr, eu).
locIn(tr, gr).
locIn(gr, eu).
"""

ABANDON_PROGRAM = """\
locIn(X, Y) :- neighOf(X, Z), locIn(Z, Y).
neighOf(tr, gr).
locIn(gr, eu).
"""


@pytest.fixture
def region_program():
    return parse_program(REGION_PROGRAM)


@pytest.fixture
def abandon_program():
    return parse_program(ABANDON_PROGRAM)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


def finite_difference(loss_fn, params, eps=1e-5):
    """Central finite differences of loss_fn() w.r.t. the flat parameter vector."""
    flat = params.flatten()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        params.load_flat(bumped)
        up = loss_fn()
        bumped[i] -= 2 * eps
        params.load_flat(bumped)
        down = loss_fn()
        grad[i] = (up - down) / (2 * eps)
    params.load_flat(flat)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-4, abs_floor=1e-7):
    scale = np.maximum(np.abs(numeric), np.abs(analytic))
    err = np.abs(analytic - numeric)
    bad = err > np.maximum(rel * scale, abs_floor)
    assert not bad.any(), (
        f"{bad.sum()} of {bad.size} gradient entries off; "
        f"worst rel err {np.max(err / np.maximum(scale, 1e-30)):.3e}"
    )
