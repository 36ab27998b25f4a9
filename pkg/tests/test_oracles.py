import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

from fptd.closed_form import ftilde, ig_cdf, smoothed_ftilde
from fptd.errors import DomainError, NotSpectrallyNegative, UnsupportedJumpKind
from fptd.estimator import estimate_cdf, estimate_density
from fptd.model import Exponential, FiniteMixture, Gaussian, JumpDiffusionModel, PointMass
from fptd.oracles import (
    euler_hitting_mc,
    kendall_residual,
    make_marginal_spec,
    marginal_density,
    smoothed_ftilde_quadrature,
)

# ---- marginal density ----------------------------------------------------------------

def test_marginal_pure_diffusion():
    mod = JumpDiffusionModel(0.4, 0.0)
    spec = make_marginal_spec(mod, 2.0)
    y = np.linspace(-3, 4, 9)
    assert np.allclose(marginal_density(spec, 2.0, y), stats.norm.pdf(y, 0.8, math.sqrt(2.0)), rtol=1e-14, atol=0)


def test_marginal_point_mass_series():
    mod = JumpDiffusionModel(0.0, 1.0, PointMass(-1.0))
    ref = sum(math.exp(-1) / math.factorial(k) * stats.norm.pdf(k) for k in range(31))
    assert marginal_density(make_marginal_spec(mod, 1.0), 1.0, 0.0) == pytest.approx(ref, rel=1e-12)


def test_marginal_point_mass_histogram():
    mod = JumpDiffusionModel(0.0, 1.0, PointMass(-1.0))
    spec = make_marginal_spec(mod, 1.0)
    gen = np.random.default_rng(3)
    n = 10**6
    sample = gen.standard_normal(n) - gen.poisson(1.0, n)
    edges = np.linspace(-7.0, 4.0, 201)
    counts, _ = np.histogram(sample, edges)
    probs = np.array([integrate.quad(lambda y: marginal_density(spec, 1.0, y), a, b)[0]
                      for a, b in zip(edges[:-1], edges[1:])])
    inside = counts.sum()
    expected = probs / probs.sum() * inside
    keep = expected > 5
    chi2 = ((counts[keep] - expected[keep]) ** 2 / expected[keep]).sum()
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 0.01


def test_marginal_gaussian_symmetry():
    spec = make_marginal_spec(JumpDiffusionModel(0.0, 1.0, Gaussian(0.0, 1.0)), 1.0)
    y = np.linspace(0.1, 5, 30)
    assert np.max(np.abs(marginal_density(spec, 1.0, y) - marginal_density(spec, 1.0, -y))) < 1e-12


@pytest.mark.parametrize(
    "model, t",
    [
        (JumpDiffusionModel(1.0, 1.0, PointMass(-1.0)), 1.0),
        (JumpDiffusionModel(0.0, 1.0, Gaussian(0.0, 1.0)), 1.0),
        (JumpDiffusionModel(-0.3, 2.5, Gaussian(0.5, 0.3)), 2.0),
        (JumpDiffusionModel(0.2, 1.0, FiniteMixture((0.5, 0.5), (PointMass(-1.0), PointMass(-0.25)))), 3.0),
    ],
)
def test_marginal_integrates_to_one(model, t):
    spec = make_marginal_spec(model, t)
    centre = (model.m + model.a * model.jumps.mean) * t
    sd = math.sqrt(t * (1 + model.a * model.jumps.second_moment))
    lo, hi = centre - 14 * sd, centre + 14 * sd
    mass = integrate.quad(lambda y: marginal_density(spec, t, y), lo, hi, points=list(np.linspace(lo, hi, 40)[1:-1]),
                          limit=800, epsabs=1e-13, epsrel=1e-12)[0]
    assert abs(mass - 1) < 1e-8


def test_truncation_is_minimal():
    spec = make_marginal_spec(JumpDiffusionModel(0.0, 3.0, PointMass(-1.0)), 2.0)
    assert stats.poisson.sf(spec.K, 6.0) <= 1e-12 < stats.poisson.sf(spec.K - 1, 6.0)
    assert spec.tail_bound == pytest.approx(stats.poisson.sf(spec.K, 6.0))


def test_marginal_unsupported_kind():
    with pytest.raises(UnsupportedJumpKind):
        make_marginal_spec(JumpDiffusionModel(0.0, 1.0, Exponential(1.0, "-")), 1.0)


# ---- Kendall identity --------------------------------------------------------------------

@pytest.mark.parametrize("t", [0.3, 0.5, 1.0, 2.0, 7.0])
def test_kendall_pure_diffusion_exact(t, bm):
    est = estimate_density(bm, 1.3, [t], 1, 0)
    r = kendall_residual(bm, 1.3, t, est)
    assert abs(r.residual) < 1e-14 and r.passed


def test_kendall_orientation_for_pure_diffusion():
    # t ftilde(t, x) = x phi(x / sqrt t) / sqrt t; swapping t and x breaks it away from t = x
    t, x = 2.0, 1.0
    p = stats.norm.pdf(x / math.sqrt(t)) / math.sqrt(t)
    assert t * ftilde(t, x, 0.0) == pytest.approx(x * p, rel=1e-14)
    assert abs(x * ftilde(t, x, 0.0) - t * p) > 0.1


def test_kendall_spectrally_negative_model(sn_model):
    grid = [0.5, 1.0, 2.0]
    est = estimate_density(sn_model, 1.0, grid, 100_000, 21)
    for t in grid:
        assert kendall_residual(sn_model, 1.0, t, est).passed


def test_kendall_second_model():
    mod = JumpDiffusionModel(0.5, 2.0, PointMass(-0.5))
    grid = [0.5, 1.0, 2.0]
    est = estimate_density(mod, 1.0, grid, 100_000, 22)
    assert all(kendall_residual(mod, 1.0, t, est).passed for t in grid)


def test_kendall_rejects_upward_jumps():
    mod = JumpDiffusionModel(0.0, 1.0, PointMass(0.5))
    est = estimate_density(mod, 1.0, [1.0], 10, 0)
    with pytest.raises(NotSpectrallyNegative):
        kendall_residual(mod, 1.0, 1.0, est)


def test_kendall_time_must_be_on_grid(sn_model):
    est = estimate_density(sn_model, 1.0, [1.0], 10, 0)
    with pytest.raises(DomainError):
        kendall_residual(sn_model, 1.0, 0.7, est)


# ---- Euler oracle -------------------------------------------------------------------------

def test_euler_single_step_is_terminal_law():
    n = 200_000
    for m in (-0.5, 0.0, 0.5):
        p = euler_hitting_mc(JumpDiffusionModel(m, 0.0), 1.0, 2.0, 1, n, 5)
        exact = stats.norm.sf((1.0 - 2.0 * m) / math.sqrt(2.0))
        assert abs(p - exact) <= 3 * math.sqrt(exact * (1 - exact) / n)


def test_euler_converges_from_below():
    n = 20_000
    est = [euler_hitting_mc(JumpDiffusionModel(0.0, 0.0), 1.0, 1.0, s, n, 6) for s in (2**8, 2**10, 2**12)]
    exact = ig_cdf(1.0, 1.0, 0.0)
    se = math.sqrt(exact * (1 - exact) / n)
    for lo, hi in zip(est, est[1:]):
        assert hi >= lo - 3 * math.sqrt(2) * se
    assert all(e <= exact + 3 * se for e in est)
    coarse = euler_hitting_mc(JumpDiffusionModel(0.0, 0.0), 1.0, 1.0, 4, n, 6)
    assert coarse < est[-1]


def test_euler_below_bridge_estimate():
    n = 20_000
    for mod in (JumpDiffusionModel(0.0, 1.0, Gaussian(0.0, 1.0)), JumpDiffusionModel(-0.5, 2.0, Exponential(2.0))):
        e = euler_hitting_mc(mod, 1.0, 1.5, 64, n, 7)
        c = estimate_cdf(mod, 1.0, [1.5], n, 8).p_hat[0]
        se = math.sqrt(c * (1 - c) / n)
        assert e <= c + 3 * math.sqrt(2) * se


def test_euler_counts_jump_crossings():
    # a point mass jump of size 2 from 0 crosses level 1 even with one Euler step
    n = 20_000
    p = euler_hitting_mc(JumpDiffusionModel(0.0, 1.0, PointMass(2.0)), 1.0, 1.0, 1, n, 9)
    assert p >= 1 - math.exp(-1) - 0.01


def test_euler_domain():
    with pytest.raises(DomainError):
        euler_hitting_mc(JumpDiffusionModel(0.0, 0.0), 1.0, 1.0, 0, 10, 0)


# ---- smoothed ftilde by quadrature ------------------------------------------------------------

def test_smoothed_quadrature_grid():
    worst = max(
        abs(smoothed_ftilde(*p) - smoothed_ftilde_quadrature(*p))
        for p in itertools.product([0.5, 1.0, 2.0], [-1.0, 0.0, 1.0], [0.5, 1.0], [-1.0, 0.0, 1.0])
    )
    assert worst < 1e-8


def test_smoothed_quadrature_limits():
    for u, mu, m in [(1.0, 1.0, 0.0), (0.5, 2.0, -1.0), (2.0, -1.0, 1.0)]:
        target = ftilde(u, mu, m) if mu > 0 else 0.0
        assert abs(smoothed_ftilde_quadrature(u, mu, 1e-6, m) - target) < 1e-4
    assert smoothed_ftilde_quadrature(1.0, -10.0, 1.0, 0.0) < 1e-12


def test_smoothed_quadrature_domain():
    with pytest.raises(DomainError):
        smoothed_ftilde_quadrature(0.0, 1.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        smoothed_ftilde_quadrature(1.0, 1.0, 0.0, 0.0)
