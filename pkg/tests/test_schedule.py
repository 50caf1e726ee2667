"""Noise schedule construction and the per-step affine maps."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualinv.errors import ParameterError
from dualinv.latent import Latent
from dualinv.schedule import (NoiseSchedule, coeffs, ddim_invert_step_naive,
                              ddim_step, make_linear_schedule)

# product of (1 - beta_t) for the default schedule, evaluated with plain
# arithmetic before the implementation existed
ABAR_50_ORACLE = 0.602951597329715


def test_single_step_product():
    sched = make_linear_schedule(T=1, beta_start=0.5, beta_end=0.5)
    assert sched.alpha_bar.tolist() == [1.0, 0.5]


def test_default_schedule_endpoint():
    sched = make_linear_schedule()
    assert sched.T == 50
    assert sched.alpha_bar[50] == pytest.approx(ABAR_50_ORACLE, abs=1e-12)
    assert abs(sched.alpha_bar[50] - 0.6) < 0.1
    assert np.all(np.diff(sched.alpha_bar) < 0.0)


def test_coeffs_match_formulas():
    sched = make_linear_schedule()
    for t in (1, 17, 50):
        a_t, a_p = sched.alpha_bar[t], sched.alpha_bar[t - 1]
        c1, c2 = coeffs(sched, t)
        assert c1 == pytest.approx(np.sqrt(a_t / a_p), rel=1e-14)
        assert c2 == pytest.approx(
            np.sqrt(a_t) * (np.sqrt(1 / a_t - 1) - np.sqrt(1 / a_p - 1)),
            rel=1e-14)


def test_coeffs_hand_values():
    one_step = NoiseSchedule(T=1, alpha_bar=np.array([1.0, 0.25]))
    c1, c2 = coeffs(one_step, 1)
    assert c1 == pytest.approx(0.5, abs=1e-5)
    assert c2 == pytest.approx(0.86603, abs=1e-5)  # 0.5 * sqrt(3)
    two_step = NoiseSchedule(T=2, alpha_bar=np.array([1.0, 0.5, 0.25]))
    c1, c2 = coeffs(two_step, 2)
    assert c1 == pytest.approx(0.70711, abs=1e-5)
    assert c2 == pytest.approx(0.36603, abs=1e-5)  # 0.5 * (sqrt(3) - 1)


def test_step_hand_values():
    sched = NoiseSchedule(T=1, alpha_bar=np.array([1.0, 0.25]))
    z = Latent(np.array([1.0]))
    eps = Latent(np.array([1.0]))
    # sampling step: 2*z + (0 - sqrt(3))*eps
    out = ddim_step(z, eps, sched, 1)
    assert out.flat[0] == pytest.approx(2.0 - np.sqrt(3.0), abs=1e-5)
    # inversion step: 0.5*2 + 0.5*sqrt(3)*1
    back = ddim_invert_step_naive(Latent(np.array([2.0])), eps, sched, 1)
    assert back.flat[0] == pytest.approx(1.86603, abs=1e-5)


def test_forward_coefficient_magnitude_bounded():
    sched = make_linear_schedule()
    for t in range(1, sched.T + 1):
        c1, _ = coeffs(sched, t)
        assert abs(c1) <= 1.0


def test_steps_are_linear_in_inputs():
    sched = make_linear_schedule()
    rng = np.random.default_rng(13)
    a, b = 2.0, -0.5
    z1, z2 = Latent(rng.standard_normal(3)), Latent(rng.standard_normal(3))
    e1, e2 = Latent(rng.standard_normal(3)), Latent(rng.standard_normal(3))
    for op in (ddim_step, ddim_invert_step_naive):
        lhs = op(Latent(a * z1.flat + b * z2.flat),
                 Latent(a * e1.flat + b * e2.flat), sched, 12).flat
        rhs = a * op(z1, e1, sched, 12).flat + b * op(z2, e2, sched, 12).flat
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_inversion_step_is_affine_in_inputs():
    sched = make_linear_schedule()
    rng = np.random.default_rng(4)
    z = Latent(rng.standard_normal(6))
    eps = Latent(rng.standard_normal(6))
    c1, c2 = coeffs(sched, 9)
    out = ddim_invert_step_naive(z, eps, sched, 9)
    np.testing.assert_allclose(out.flat, c1 * z.flat + c2 * eps.flat,
                               rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=50),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_round_trip_identity_under_shared_noise(t, seed):
    sched = make_linear_schedule()
    rng = np.random.default_rng(seed)
    z = Latent(rng.standard_normal(5))
    eps = Latent(rng.standard_normal(5))
    back = ddim_step(ddim_invert_step_naive(z, eps, sched, t), eps, sched, t)
    np.testing.assert_allclose(back.flat, z.flat, atol=1e-9)


def test_timestep_bounds_checked():
    sched = make_linear_schedule()
    z = Latent(np.zeros(3))
    with pytest.raises(IndexError):
        ddim_step(z, z, sched, 0)
    with pytest.raises(IndexError):
        ddim_step(z, z, sched, 51)


@pytest.mark.parametrize("kwargs", [
    {"T": 0},
    {"beta_start": 0.0},
    {"beta_start": 0.3, "beta_end": 0.2},
    {"beta_end": 1.0},
])
def test_invalid_schedule_parameters(kwargs):
    with pytest.raises(ParameterError):
        make_linear_schedule(**kwargs)


def test_schedule_validation():
    with pytest.raises(ParameterError):
        NoiseSchedule(T=2, alpha_bar=np.array([0.9, 0.8, 0.7]))  # head not 1
    with pytest.raises(ParameterError):
        NoiseSchedule(T=2, alpha_bar=np.array([1.0, 0.8, 0.9]))  # not decreasing
    with pytest.raises(ParameterError):
        NoiseSchedule(T=2, alpha_bar=np.array([1.0, 0.8]))  # wrong length
