import numpy as np
import pytest

from atombench.regisnet.loss import ASLConfig, asl_contributions, asl_loss, asl_terms_from_prob, logistic

CFG = ASLConfig()


def test_defaults():
    assert (CFG.gamma_pos, CFG.gamma_neg, CFG.margin, CFG.eps) == (0.0, 4.0, 0.05, 1e-8)


def test_confident_positive():
    c, _ = asl_terms_from_prob(np.array([1 - 1e-8]), np.array([1.0]))
    assert 0.0 <= c[0] <= 2e-8


def test_negative_below_margin_exactly_zero():
    p = np.linspace(0, 0.05, 101)
    c, g = asl_terms_from_prob(p, np.zeros_like(p))
    assert np.all(c == 0.0) and np.all(g == 0.0)


def test_positive_half():
    c, _ = asl_terms_from_prob(np.array([0.5]), np.array([1.0]))
    assert c[0] == pytest.approx(0.693147, abs=1e-6)
    assert c[0] == pytest.approx(np.log(2), abs=1e-15)


def test_negative_closed_form():
    p = 0.55
    c, _ = asl_terms_from_prob(np.array([p]), np.array([0.0]))
    assert c[0] == pytest.approx(-(0.5**4) * np.log(0.5), rel=1e-14)


def test_grid_contracts():
    p = np.concatenate([np.linspace(0, 1, 496), [1e-8, 1 - 1e-8, 0.05, 0.0500001]])
    for y in (0.0, 1.0):
        c, _ = asl_terms_from_prob(p, np.full_like(p, y))
        assert np.all(c >= 0)
        zero_expected = p >= 1 - 1e-8 if y else p <= 0.05
        assert np.array_equal(c == 0, zero_expected)


def test_loss_zero_iff_condition():
    logits = np.array([40.0, -40.0, -5.0])
    y = np.array([1.0, 0.0, 0.0])
    assert asl_loss(logits, y)[0] == 0.0
    assert asl_loss(np.array([3.0, -40.0, -5.0]), y)[0] > 0
    assert asl_loss(np.array([40.0, -40.0, 0.0]), y)[0] > 0


def test_mean_reduction():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 27))
    y = (rng.random((5, 27)) < 0.2).astype(float)
    c, _ = asl_contributions(z, y)
    assert asl_loss(z, y)[0] == pytest.approx(c.mean(), rel=1e-15)


def test_rejects_nonbinary():
    with pytest.raises(ValueError):
        asl_loss(np.zeros(3), np.array([0, 0.5, 1]))


def test_logistic_stable():
    z = np.array([-800.0, -1.0, 0.0, 1.0, 800.0])
    p = logistic(z)
    assert np.all(np.isfinite(p)) and p[2] == 0.5
    assert p[0] == 0.0 and p[-1] == 1.0
    assert p[1] + p[3] == pytest.approx(1.0, abs=1e-16)


def test_gradient_matches_central_difference():
    rng = np.random.default_rng(5)
    z = rng.normal(scale=4, size=200)
    y = (rng.random(200) < 0.5).astype(float)
    _, g = asl_contributions(z, y)
    h = 1e-6
    up, _ = asl_contributions(z + h, y)
    down, _ = asl_contributions(z - h, y)
    fd = (up - down) / (2 * h)
    assert np.max(np.abs(fd - g) / np.maximum(np.maximum(np.abs(fd), np.abs(g)), 1e-8)) < 1e-4
