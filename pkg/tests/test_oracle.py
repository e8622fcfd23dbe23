"""Population oracle against values frozen from an independent
derivation run (tests/fixtures/derived.json, 4e6 draws). Tolerances
cover the Monte Carlo gap between that run and the 1e6-draw samples
used here."""
import json
import pathlib

import numpy as np
import pytest

from cbara.datagen import CovariateVector, Scenario, ScenarioId
from cbara.oracle import (
    PopulationSample,
    asymptotic_report,
    balance_coeff_a,
    invariant_pi_g_check,
    ipw_asym_var,
    mest_covariance,
    oracle_theta_star,
    sigma_z_sq,
)
from cbara.policy import Family, ModelCoefficients, TargetPolicy, target_ratio

FIXTURES = json.loads(
    (pathlib.Path(__file__).parent / "fixtures" / "derived.json").read_text()
)
POLICY = TargetPolicy(family=Family.CRD)


@pytest.fixture(scope="module")
def pop_a():
    return PopulationSample(Scenario(ScenarioId.A), seed=301, m=10**6)


@pytest.fixture(scope="module")
def pop_b():
    return PopulationSample(Scenario(ScenarioId.B), seed=302, m=10**6)


@pytest.fixture(scope="module")
def theta_a(pop_a):
    return oracle_theta_star(pop_a)


@pytest.fixture(scope="module")
def theta_b(pop_b):
    return oracle_theta_star(pop_b)


def test_limit_parameter_continuous(pop_a, theta_a):
    np.testing.assert_allclose(
        theta_a.as_array(), FIXTURES["theta_star"]["A"], atol=5e-3
    )


def test_limit_parameter_misspecified(pop_b, theta_b):
    np.testing.assert_allclose(
        theta_b.as_array(), FIXTURES["theta_star"]["B"], atol=5e-3
    )


def test_limit_parameter_discrete():
    pop = PopulationSample(Scenario(ScenarioId.DISCRETE), seed=303, m=10**5)
    theta = oracle_theta_star(pop)
    np.testing.assert_allclose(
        theta.as_array()[:4], FIXTURES["theta_star"]["Discrete4"], atol=5e-3
    )
    assert theta.beta2 == 0.0 and theta.beta3 == 0.0


def test_balance_coefficients(pop_a, theta_a):
    a = balance_coeff_a(pop_a, theta_a, POLICY)
    np.testing.assert_allclose(a, FIXTURES["zstar"]["balance_a"], atol=0.01)


def test_asymptotic_spillover_variance(pop_a, theta_a):
    a = balance_coeff_a(pop_a, theta_a, POLICY)
    s2 = sigma_z_sq(pop_a, theta_a, POLICY, a)
    assert s2 == pytest.approx(FIXTURES["zstar"]["sigma_sq"], rel=0.02)
    s2_a0 = sigma_z_sq(pop_a, theta_a, POLICY, np.zeros(4))
    assert s2_a0 == pytest.approx(FIXTURES["zstar"]["sigma_sq_a0"], rel=0.02)
    # balancing can only shrink the variance
    assert s2 < s2_a0


def test_ipw_asymptotic_variance(pop_a, theta_a, pop_b, theta_b):
    fx = FIXTURES["ipw"]
    assert ipw_asym_var(pop_a, theta_a, POLICY, balance=True) == pytest.approx(
        fx["A"]["v_opt_noiseless"], rel=0.02
    )
    assert ipw_asym_var(pop_a, theta_a, POLICY, balance=False) == pytest.approx(
        fx["A"]["v_a0_noiseless"], rel=0.02
    )
    assert ipw_asym_var(pop_b, theta_b, POLICY, balance=True) == pytest.approx(
        fx["B"]["v_opt_noiseless"], rel=0.02
    )
    assert ipw_asym_var(pop_b, theta_b, POLICY, balance=False) == pytest.approx(
        fx["B"]["v_a0_noiseless"], rel=0.02
    )


def test_noise_adds_to_ipw_variance():
    pop_n = PopulationSample(Scenario(ScenarioId.A, 1.0), seed=304, m=4 * 10**5)
    v = ipw_asym_var(pop_n, oracle_theta_star(pop_n), POLICY, balance=True)
    want = (
        FIXTURES["ipw"]["A"]["v_opt_noiseless"]
        + FIXTURES["ipw"]["A"]["noise_add_per_sigma_sq"]
    )
    assert v == pytest.approx(want, rel=0.03)


def test_mest_covariance_matches_fixture(pop_b, theta_b):
    sig = mest_covariance(pop_b, theta_b, POLICY)
    ref = np.array(FIXTURES["mest"]["sigma_B_noiseless"])
    assert float(np.abs(sig - ref).max()) <= 0.02 * float(np.abs(ref).max())
    np.testing.assert_allclose(sig, sig.T, atol=1e-12)


def test_mest_covariance_shared_noise_case():
    pop = PopulationSample(Scenario(ScenarioId.A, 1.0), seed=305, m=4 * 10**5)
    sig = mest_covariance(pop, oracle_theta_star(pop), POLICY)
    ref = np.array(FIXTURES["mest"]["sigma_A_shared_noise_sd1"])
    assert float(np.abs(sig - ref).max()) <= 0.03 * float(np.abs(ref).max())


def test_discrete_target_ratios():
    pop = PopulationSample(Scenario(ScenarioId.DISCRETE), seed=306, m=10**5)
    theta = oracle_theta_star(pop)
    for family_name, key in (("logistic", "rho_star_logistic"), ("probit", "rho_star_probit")):
        pol = TargetPolicy(family=Family(family_name))
        for atom, want in FIXTURES["discrete"][key].items():
            got = target_ratio(pol, theta, CovariateVector(float(atom), 0.0, 0.0))
            assert got == pytest.approx(want, abs=1e-6)


def test_custom_z_definition_matches_vectorized_path():
    # the per-unit fallback walks python records, so keep the sample small
    pop = PopulationSample(Scenario(ScenarioId.A), seed=308, m=2 * 10**4)
    theta = oracle_theta_star(pop)
    a = balance_coeff_a(pop, theta, POLICY)
    fast = sigma_z_sq(pop, theta, POLICY, a)
    slow = sigma_z_sq(pop, theta, POLICY, a, z_def=lambda unit: unit.zstar)
    assert slow == pytest.approx(fast, abs=1e-12)


def test_report_bundles_consistent_pieces(pop_a, theta_a):
    report = asymptotic_report(pop_a, POLICY)
    assert report.theta_star == theta_a
    a = balance_coeff_a(pop_a, theta_a, POLICY)
    np.testing.assert_allclose(report.a_vec, a, atol=1e-12)
    assert report.sigma_z_sq == pytest.approx(
        sigma_z_sq(pop_a, theta_a, POLICY, a), abs=1e-12
    )
    assert report.mest_cov.shape == (6, 6)


def test_invariant_probability_identity():
    pol = TargetPolicy(family=Family.LOGISTIC)
    theta = ModelCoefficients(2.0, 1.0, 0.0, -1.0, 0.5, -0.5)
    probes = [CovariateVector(0.0, 0.0, 0.0), CovariateVector(1.0, 0.5, -0.5)]
    devs = invariant_pi_g_check(pol, theta, probes, horizon=10**5, seed=307)
    assert max(devs) < 0.01


def test_invariant_check_rejects_short_horizons():
    pol = TargetPolicy(family=Family.LOGISTIC)
    with pytest.raises(ValueError):
        invariant_pi_g_check(pol, ModelCoefficients(), [CovariateVector(0, 0, 0)], 10**4)
