import numpy as np
import pytest
from hypothesis import given, strategies as st

from ma_iterate.errors import DivisionByZero, DomainError, HypothesisViolated
from ma_iterate.profile import (Coupling, H_eval, H_inv, Profile, check_hypothesis_b1, couple,
                                h_eval)

EXP = Profile.exponential(1)
POW = Profile.power(1, 1.0)


def test_h_eval():
    assert h_eval(EXP, 0.0) == 1
    assert h_eval(POW, 1.0) == 1
    assert h_eval(POW, 2.0) == 0.125
    with pytest.raises(DomainError):
        h_eval(POW, 0.0)


def test_H_inv():
    assert H_inv(EXP, 1.0) == 0
    assert H_inv(POW, 0.5) == pytest.approx(1, abs=1e-15)
    assert H_inv(EXP, np.exp(-3)) == pytest.approx(3, abs=1e-14)


def test_couple():
    assert couple(Coupling.DIFFERENCE, 3, 1) == 2
    assert couple(Coupling.RATIO, 6, 2) == 3
    assert couple(Coupling.RATIO, 6, couple(Coupling.RATIO, 6, 2)) == 2


def test_ratio_by_zero():
    with pytest.raises(DivisionByZero):
        couple(Coupling.RATIO, 1.0, 0.0)


def test_b1():
    rep = check_hypothesis_b1(POW)
    assert rep.C == 1 and all(r == pytest.approx(1) for r in rep.ratios)
    rep = check_hypothesis_b1(EXP)
    assert rep.p == 1 and rep.C == pytest.approx(27 * np.exp(-3), rel=1e-14)
    with pytest.raises(HypothesisViolated):
        check_hypothesis_b1(Profile.power(1, 0.0))


@given(st.floats(0.05, 30), st.sampled_from([EXP, POW, Profile.power(2, 0.5)]))
def test_H_is_tail_integral_and_inverts(t, prof):
    # H' = -h and H_inv(H(t)) = t
    d = 1e-6 * max(t, 1)
    deriv = (H_eval(prof, t + d) - H_eval(prof, t - d)) / (2 * d)
    assert deriv == pytest.approx(-h_eval(prof, t), rel=1e-5)
    assert H_inv(prof, H_eval(prof, t)) == pytest.approx(t, rel=1e-10)


@given(st.floats(0.01, 50), st.floats(0.01, 50))
def test_h_decreasing(a, b):
    for prof in (EXP, POW):
        if a < b:
            assert h_eval(prof, a) > h_eval(prof, b) or h_eval(prof, b) == 0
