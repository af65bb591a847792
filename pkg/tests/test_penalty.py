
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asymrls._optim import golden_section
from asymrls.errors import NonConvexUnsupported
from asymrls.penalty import (BOX, NONNEG, REALS, Elastic, GenericPenalty, L1, L2Half, PenaltyFamily,
                             PenaltySpec, prox, prox_generic, support_from_name, total_penalty)
from asymrls.signal_model import BlockSignalModel, ScalarPrior

FAMILIES = [L1(), L2Half(), Elastic(0.7, 1.3)]
SUPPORTS = [REALS, BOX, NONNEG]


def _brute(fam, y, c, support, w=1.0):
    lo = max(support.lo, -abs(y) - 10)
    hi = min(support.hi, abs(y) + 10)
    grid = np.linspace(lo, hi, 20001)
    f = 0.5 * (y - grid) ** 2 + c * fam.value(grid, w)
    i = int(np.argmin(f))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    x, _ = golden_section(lambda v: 0.5 * (y - v) ** 2 + c * float(fam.value(v, w)), a, b, tol=1e-13)
    return x


def test_soft_threshold_examples():
    assert prox(L1(), 3.0, 1.0) == 2.0
    assert prox(L1(), 0.5, 1.0) == 0.0


@pytest.mark.parametrize("y", [-3.0, 0.2, 5.0])
@pytest.mark.parametrize("c", [0.1, 1.0, 7.0])
def test_ridge_shrinkage(y, c):
    assert prox(L2Half(), y, c) == pytest.approx(y / (1 + c), rel=1e-15)


def test_box_ridge_by_constrained_oracle():
    assert prox(L2Half(), 2.0, 1.0, BOX) == 1.0
    # the oracle's golden section is sqrt(eps)-limited at a smooth minimum
    assert _brute(L2Half(), 2.0, 1.0, BOX) == pytest.approx(1.0, abs=1e-7)


def test_prox_rejects_nonpositive_c():
    with pytest.raises(ValueError):
        prox(L1(), 1.0, 0.0)


def test_nonconvex_family_rejected():
    class Bad(PenaltyFamily):
        convex = False

    with pytest.raises(NonConvexUnsupported):
        prox(Bad("bad", 1.0), 1.0, 1.0)


def test_prox_generic_examples():
    assert prox_generic(lambda v: abs(v), 3.0, 1.0) == pytest.approx(2.0, abs=1e-8)
    assert prox_generic(lambda v: 0.0 * v, 0.7, 1.0) == pytest.approx(0.7, abs=1e-9)
    assert prox_generic(lambda v: 0.5 * v * v, 1.0, 3.0) == pytest.approx(0.25, abs=1e-9)


def test_generic_penalty_wrapper():
    g = GenericPenalty(lambda v: np.abs(v), "abs")
    assert prox(g, 3.0, 1.0) == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
@pytest.mark.parametrize("support", SUPPORTS, ids=lambda s: s.name)
def test_prox_generic_matches_closed_form_grid(fam, support):
    for y in np.linspace(-4, 4, 17):
        for c in (0.05, 0.5, 2.0):
            exact = prox(fam, y, c, support)
            num = prox_generic(lambda v: fam.value(v), float(y), c, (support.lo, support.hi))
            assert num == pytest.approx(exact, abs=1e-8)


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
@pytest.mark.parametrize("support", SUPPORTS, ids=lambda s: s.name)
def test_closed_form_matches_brute_force(fam, support):
    for y in (-2.5, -0.3, 0.0, 0.8, 3.1):
        assert prox(fam, y, 0.9, support, w=1.7) == pytest.approx(_brute(fam, y, 0.9, support, 1.7), abs=1e-7)


@settings(max_examples=200, deadline=None)
@given(y1=st.floats(-20, 20), y2=st.floats(-20, 20), c=st.floats(1e-3, 50),
       fi=st.integers(0, 2), si=st.integers(0, 2), w=st.floats(0, 10))
def test_prox_nonexpansive(y1, y2, c, fi, si, w):
    fam, sup = FAMILIES[fi], SUPPORTS[si]
    d = abs(prox(fam, y1, c, sup, w) - prox(fam, y2, c, sup, w))
    assert d <= abs(y1 - y2) + 1e-12


@settings(max_examples=100, deadline=None)
@given(y=st.floats(-50, 50), fi=st.integers(0, 2))
def test_prox_identity_as_c_vanishes(y, fi):
    assert abs(prox(FAMILIES[fi], y, 1e-8) - y) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(y=st.floats(-20, 20), c=st.floats(1e-3, 10), w1=st.floats(0, 5), w2=st.floats(0, 5))
def test_l1_weight_monotone(y, c, w1, w2):
    lo, hi = sorted((w1, w2))
    assert abs(prox(L1(), y, c, w=hi)) <= abs(prox(L1(), y, c, w=lo)) + 1e-15


def test_complex_prox_is_radial():
    y = 3.0 * np.exp(1j * 0.4)
    v = prox(L1(), y, 1.0)
    assert abs(v) == pytest.approx(2.0)
    assert np.angle(v) == pytest.approx(0.4)


def test_total_penalty_examples():
    m1 = BlockSignalModel.from_fractions(2, [1.0], [ScalarPrior.gauss()])
    assert total_penalty(PenaltySpec(((L1(), 2.0),)), np.zeros(2), m1) == 0.0
    assert total_penalty(PenaltySpec(((L1(), 2.0),)), np.array([1.0, -1.0]), m1) == pytest.approx(4.0)
    m2 = BlockSignalModel.from_fractions(2, [0.5, 0.5], [ScalarPrior.gauss(), ScalarPrior.gauss()])
    spec = PenaltySpec(((L1(), 1.0), (L2Half(), 1.0)))
    assert total_penalty(spec, np.array([1.0, 2.0]), m2) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        total_penalty(spec, np.ones(3), m2)


def test_penalty_nonnegative_and_subdifferential():
    for fam in FAMILIES:
        v = np.linspace(-3, 3, 61)
        assert np.all(fam.value(v, 1.3) >= 0)
        lo, hi = fam.subdifferential(np.array([0.0, 1.0]), 1.0)
        assert lo[0] == -fam.l1 and hi[0] == fam.l1


def test_coordinate_penalty_matches_family():
    m = BlockSignalModel.from_fractions(6, [0.5, 0.5], [ScalarPrior.gauss(), ScalarPrior.gauss()])
    spec = PenaltySpec(((L1(), 1.0), (Elastic(0.5, 2.0), 3.0)), support=BOX)
    coord = spec.coordinate(m)
    y = np.array([-2.0, 0.3, 1.5, -0.2, 4.0, 0.9])
    expect = [prox(fam, y[n], 0.7, BOX, w) for n in range(6) for fam, w in [spec.entries[m.block_of[n]]]]
    assert np.allclose(coord.prox(y, 0.7), expect, atol=1e-15)
    assert coord.value(y) == pytest.approx(total_penalty(spec, y, m))


def test_support_lookup():
    assert support_from_name("box") is BOX
    with pytest.raises(ValueError):
        support_from_name("simplex")
