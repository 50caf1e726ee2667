"""Inversion methods: reference handling, fixed-point refinement, the
dual-guided loop, baselines, reconstruction, and the editing demo."""
import json

import numpy as np
import pytest

from dualinv.denoiser import GaussianMixtureDenoiser, NULL, label_cond
from dualinv.errors import ContractError, ParameterError, ShapeError
from dualinv.inversion import (InversionConfig, ReferenceNoise, dci_invert,
                               ddim_invert, edit_condition_swap,
                               extract_reference, fixed_point_loss,
                               fixed_point_refine, picard_invert, reconstruct,
                               reference_correction, reference_loss)
from dualinv.latent import Latent
from dualinv.schedule import coeffs, make_linear_schedule

SCHED = make_linear_schedule()


def affine_oracle(dim=4):
    """Zero-mean single Gaussian: eps*(z, t) = sqrt(1 - abar_t) z."""
    return GaussianMixtureDenoiser(SCHED, np.array([1.0]),
                                   np.zeros((1, dim)), 1.0)


def oracle_ref(eps: Latent) -> ReferenceNoise:
    return extract_reference(eps, "oracle", ground_truth_eps=eps)


# -- reference extraction ----------------------------------------------------

def test_oracle_reference_is_a_passthrough():
    e = Latent(np.array([0.1, -0.4]))
    ref = extract_reference(Latent(np.zeros(2)), "oracle", ground_truth_eps=e)
    assert ref.provenance == "oracle"
    np.testing.assert_array_equal(ref.values.flat, e.flat)


def test_whitened_reference_hand_value():
    ref = extract_reference(Latent(np.array([1.0, 3.0])), "whitened")
    np.testing.assert_allclose(ref.values.flat, [-1.0, 1.0], rtol=1e-14)
    assert ref.provenance == "whitened"


def test_reference_extraction_contract_errors():
    with pytest.raises(ContractError):
        extract_reference(Latent(np.full(3, 2.0)), "whitened")
    with pytest.raises(ContractError):
        extract_reference(Latent(np.zeros(3)), "oracle")
    with pytest.raises(ParameterError):
        extract_reference(Latent(np.ones(3)), "median")


# -- noise correction --------------------------------------------------------

def test_correction_hand_value():
    raw = Latent(np.array([1.0, 0.0, 0.0, 0.0]))
    ref = oracle_ref(Latent(np.zeros(4)))
    out = reference_correction(raw, ref, 0.5)
    np.testing.assert_allclose(out.flat, [0.5, 0.0, 0.0, 0.0], rtol=1e-14)
    assert reference_loss(raw, ref) == pytest.approx(1.0)


def test_correction_identities():
    rng = np.random.default_rng(0)
    raw = Latent(rng.standard_normal(5))
    ref = oracle_ref(Latent(rng.standard_normal(5)))
    np.testing.assert_array_equal(reference_correction(raw, ref, 0.0).flat,
                                  raw.flat)
    same = oracle_ref(raw)
    np.testing.assert_array_equal(reference_correction(raw, same, 3.0).flat,
                                  raw.flat)


def test_correction_shape_mismatch():
    with pytest.raises(ShapeError):
        reference_correction(Latent(np.zeros(3)),
                             oracle_ref(Latent(np.zeros(4))), 1.0)
    with pytest.raises(ParameterError):
        reference_correction(Latent(np.zeros(3)),
                             oracle_ref(Latent(np.zeros(3))), -1.0)


# -- fixed-point refinement --------------------------------------------------

def test_refine_returns_immediately_at_a_fixed_point():
    gm = affine_oracle()
    z_prev = Latent(np.array([0.5, -0.2, 0.1, 0.9]))
    t = 20
    c1, c2 = coeffs(SCHED, t)
    s = np.sqrt(1.0 - SCHED.alpha_bar[t])
    z_star = Latent(c1 * z_prev.flat / (1.0 - c2 * s))
    z, iters, trace = fixed_point_refine(z_star, z_prev, t, gm, NULL, SCHED,
                                         eta=1e-3, K=10, delta=1e-5)
    assert iters == 1
    np.testing.assert_array_equal(z.flat, z_star.flat)


@pytest.mark.parametrize("t", [1, 25, 50])
def test_refine_reaches_the_affine_closed_form(t):
    gm = affine_oracle()
    rng = np.random.default_rng(t)
    z_prev = Latent(rng.standard_normal(4))
    c1, c2 = coeffs(SCHED, t)
    s = np.sqrt(1.0 - SCHED.alpha_bar[t])
    assert abs(c2 * s) < 1.0  # the per-step map is a contraction
    z_star = c1 * z_prev.flat / (1.0 - c2 * s)
    z_init = z_prev.with_values(c1 * z_prev.flat + c2 * s * z_prev.flat)
    z, iters, trace = fixed_point_refine(z_init, z_prev, t, gm, NULL, SCHED,
                                         eta=1e-3, K=10, delta=1e-5)
    assert iters <= 10
    np.testing.assert_allclose(z.flat, z_star, atol=1e-6)
    assert all(b < a for a, b in zip(trace, trace[1:]))  # strict descent


def test_refine_with_vanishing_step_barely_moves():
    gm = affine_oracle()
    rng = np.random.default_rng(9)
    z_prev = Latent(rng.standard_normal(4))
    z_init = Latent(rng.standard_normal(4))
    z, _, _ = fixed_point_refine(z_init, z_prev, 30, gm, NULL, SCHED,
                                 eta=1e-12, K=10, delta=1e-5)
    assert np.linalg.norm(z.flat - z_init.flat) <= 1e-6


def test_refine_rejects_bad_eta():
    gm = affine_oracle()
    z = Latent(np.zeros(4))
    with pytest.raises(ParameterError):
        fixed_point_refine(z, z, 10, gm, NULL, SCHED, eta=0.0, K=5, delta=1e-5)


# -- the dual-guided loop ----------------------------------------------------

def test_config_validation():
    with pytest.raises(ParameterError):
        InversionConfig(K=0)
    with pytest.raises(ParameterError):
        InversionConfig(lam=-0.1)
    with pytest.raises(ParameterError):
        InversionConfig(delta=0.0)
    with pytest.raises(ParameterError):
        InversionConfig(reference_mode="exact")


def test_degenerate_config_matches_naive_inversion():
    gm = affine_oracle()
    rng = np.random.default_rng(3)
    z_0 = Latent(rng.standard_normal(4))
    ref = oracle_ref(Latent(rng.standard_normal(4)))
    config = InversionConfig(K=1, lam=0.0, eta=1e-12)
    z_dci, _ = dci_invert(z_0, SCHED, gm, NULL, config, ref)
    z_naive, _ = ddim_invert(z_0, SCHED, gm)
    np.testing.assert_allclose(z_dci.flat, z_naive.flat, atol=1e-8)


def _synthesize(gm, seed):
    """Draw an ideal noise, sample down to data, return (z_0, z_T*)."""
    rng = np.random.default_rng(seed)
    z_T = Latent(rng.standard_normal(gm.dim))
    z_0 = reconstruct(z_T, gm.schedule, gm)
    return z_0, z_T


def test_dual_guided_beats_naive_on_a_synthesized_instance():
    # small correction strength: on an exact oracle the predictor error
    # is modest, and the default step length would overshoot it
    gm = affine_oracle()
    z_0, z_T_star = _synthesize(gm, 41)
    ref = oracle_ref(z_T_star)
    config = InversionConfig(lam=0.05)
    z_dci, report = dci_invert(z_0, SCHED, gm, NULL, config, ref)
    z_naive, _ = ddim_invert(z_0, SCHED, gm)
    d_dci = np.linalg.norm(z_dci.flat - z_T_star.flat)
    d_naive = np.linalg.norm(z_naive.flat - z_T_star.flat)
    assert d_dci < d_naive


def test_report_invariants():
    gm = affine_oracle()
    z_0, z_T_star = _synthesize(gm, 8)
    config = InversionConfig()
    _, report = dci_invert(z_0, SCHED, gm, NULL, config, oracle_ref(z_T_star))
    assert report.method == "dci"
    assert len(report.records) == SCHED.T
    for rec in report.records:
        assert 1 <= rec.iterations <= config.K
        assert all(v >= 0.0 and np.isfinite(v) for v in rec.l_fix_trace)
        assert all(v >= 0.0 for v in rec.l_ref_trace)
        if rec.break_reason == "converged":
            assert rec.l_fix_trace[-1] < config.delta
        else:
            assert len(rec.l_fix_trace) == config.K
    payload = json.loads(report.to_json())
    assert "wall_time" not in payload
    assert payload["records"][0]["t"] == 1


def test_reinitializing_variant_completes():
    gm = affine_oracle()
    z_0, z_T_star = _synthesize(gm, 12)
    config = InversionConfig(carry_forward=False, corrected_fix=True)
    z, report = dci_invert(z_0, SCHED, gm, NULL, config, oracle_ref(z_T_star))
    assert np.all(np.isfinite(z.flat))
    assert report.total_iterations() >= SCHED.T


# -- baselines ---------------------------------------------------------------

def test_picard_reaches_the_affine_fixed_point():
    gm = affine_oracle()
    rng = np.random.default_rng(6)
    z_0 = Latent(rng.standard_normal(4))
    z_picard, report = picard_invert(z_0, SCHED, gm, K=60, delta=1e-12)
    # replay the closed-form per-step fixed points
    z = z_0.flat
    for t in range(1, SCHED.T + 1):
        c1, c2 = coeffs(SCHED, t)
        s = np.sqrt(1.0 - SCHED.alpha_bar[t])
        z = c1 * z / (1.0 - c2 * s)
    np.testing.assert_allclose(z_picard.flat, z, atol=1e-6)
    for rec in report.records:
        diffs = rec.l_fix_trace
        assert all(b < a for a, b in zip(diffs, diffs[1:]))


def test_picard_single_iteration_uses_the_current_timestep():
    gm = affine_oracle()
    rng = np.random.default_rng(7)
    z_0 = Latent(rng.standard_normal(4))
    z, _ = picard_invert(z_0, SCHED, gm, K=1)
    zf = z_0.flat
    for t in range(1, SCHED.T + 1):
        c1, c2 = coeffs(SCHED, t)
        zf = c1 * zf + c2 * gm.predict(Latent(zf), t, NULL).flat
    np.testing.assert_allclose(z.flat, zf, rtol=1e-12)
    with pytest.raises(ParameterError):
        picard_invert(z_0, SCHED, gm, K=0)


def test_naive_round_trip_error_is_positive():
    gm = affine_oracle()
    z_0, _ = _synthesize(gm, 15)
    z_T, _ = ddim_invert(z_0, SCHED, gm)
    back = reconstruct(z_T, SCHED, gm)
    assert np.linalg.norm(back.flat - z_0.flat) > 0.0


# -- reconstruction ----------------------------------------------------------

def test_reconstruct_zero_steps_is_identity():
    gm = affine_oracle()
    z = Latent(np.array([1.0, -2.0, 0.5, 0.25]))
    out = reconstruct(z, SCHED, gm, num_steps=0)
    np.testing.assert_array_equal(out.flat, z.flat)


def test_reconstruct_is_linear_on_the_affine_oracle():
    gm = affine_oracle()
    rng = np.random.default_rng(21)
    a, b = 1.7, -0.4
    z1 = Latent(rng.standard_normal(4))
    z2 = Latent(rng.standard_normal(4))
    lhs = reconstruct(Latent(a * z1.flat + b * z2.flat), SCHED, gm).flat
    rhs = a * reconstruct(z1, SCHED, gm).flat + b * reconstruct(z2, SCHED, gm).flat
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


def test_ideal_inversion_round_trip():
    # solving each per-step fixed point exactly makes inversion the true
    # inverse of the sampling recursion
    gm = affine_oracle()
    rng = np.random.default_rng(33)
    z_0 = Latent(rng.standard_normal(4))
    z_T, _ = picard_invert(z_0, SCHED, gm, K=200, delta=1e-13)
    back = reconstruct(z_T, SCHED, gm)
    np.testing.assert_allclose(back.flat, z_0.flat, atol=1e-6)


# -- editing -----------------------------------------------------------------

def test_edit_with_identical_conditions_is_plain_reconstruction():
    gm = GaussianMixtureDenoiser(SCHED, np.array([0.5, 0.5]),
                                 np.array([[3.0, 0.0], [-3.0, 0.0]]), 0.6,
                                 labels=np.array([0, 1]))
    rng = np.random.default_rng(2)
    z_0 = Latent(gm.sample(rng, label=0))
    ref = oracle_ref(Latent(rng.standard_normal(2)))
    config = InversionConfig(lam=0.5)
    c = label_cond(0)
    edited, report = edit_condition_swap(z_0, SCHED, gm, c, c, config, ref)
    z_T, _ = dci_invert(z_0, SCHED, gm, c, config, ref)
    plain = reconstruct(z_T, SCHED, gm, c)
    np.testing.assert_array_equal(edited.flat, plain.flat)
    assert report.method == "edit"
