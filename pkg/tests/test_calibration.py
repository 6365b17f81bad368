import numpy as np
import pytest

from orliczlab.calibration import fit_two_sided, fit_upper, split_halves


def test_split_halves():
    assert split_halves(10) == (slice(0, 5), slice(5, 10))
    assert split_halves(7) == (slice(0, 3), slice(3, 7))


def test_fit_upper_pass_and_fail():
    ok = fit_upper([1.0, 2.0, 1.5, 2.4])
    assert ok.K == 2.0 and ok.worst == 2.4 and ok.passed
    bad = fit_upper([1.0, 2.0, 1.5, 2.6])
    assert not bad.passed


def test_fit_two_sided_uses_reciprocals():
    fit = fit_two_sided([0.5, 1.0, 1.0, 1 / 0.55])
    assert fit.K == 2.0
    assert fit.worst == pytest.approx(1 / 0.55)
    assert fit.passed


def test_fit_two_sided_rejects_nonpositive():
    with pytest.raises(ValueError):
        fit_two_sided([1.0, 0.0])
    with pytest.raises(ValueError):
        fit_two_sided([1.0, np.inf])


def test_to_dict():
    d = fit_upper([1.0, 1.0]).to_dict()
    assert d["passed"] and d["n_calibration"] == 1 and d["n_validation"] == 1
