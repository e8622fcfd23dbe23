#!/usr/bin/env python3
"""Derive the frozen expected values used by the test suite.

Every number in tests/fixtures/derived.json comes from this script: a
deliberately independent, straight-line numpy implementation of the
simulation design (covariate law, outcome scenarios, targeted-ratio
families, balance-coefficient linear systems, asymptotic variances).
It shares no code with src/cbara so the two routes can be compared.

Run from the repo root:

    python tools/derive_fixtures.py

Writes tests/fixtures/derived.json (deterministic for a fixed SEED/M).
"""
from __future__ import annotations

import datetime
import json
import math
import pathlib
import statistics

import numpy as np
from scipy.special import ndtr  # independent normal-cdf route

SEED = 20260818
M = 4_000_000
CHUNK = 500_000

OUT = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "derived.json"

# covariate construction constants
CORR = np.array([[1.0, 0.3, 0.2], [0.3, 1.0, 0.4], [0.2, 0.4, 1.0]])
CHOL = np.linalg.cholesky(CORR)
Q25 = statistics.NormalDist().inv_cdf(0.25)
Q75 = -Q25

# outcome scenario coefficients: y(t) = it + x1*st + b2*x2 + b3*x3  (b shared)
A_COEF = dict(i1=4.5, s1=4.7, i0=7.5, s0=1.7)          # b2=2.9 b3=1.4 both arms
B_COEF = dict(i1=4.5, s1=4.7, i0=7.5, s0=1.7)          # arm-specific b below


def draw_chunk(rng: np.random.Generator, n: int):
    g = rng.standard_normal((n, 3)) @ CHOL.T
    x1 = np.where(g[:, 0] < Q25, -1.0, np.where(g[:, 0] > Q75, 1.0, 0.0))
    x2 = np.clip(g[:, 1], -2.0, 2.0) / 2.0
    x3 = 2.0 * ndtr(g[:, 2]) - 1.0
    eps_z = 0.2 * rng.standard_normal(n)
    zs = np.tanh(0.8 * x1 + 0.5 * x2**2 - 0.3 * x3 + 0.1 * x1 * x3) + eps_z
    return g, x1, x2, x3, zs


def outcome_means(scn: str, x1, x2, x3):
    if scn == "A":
        m1 = 4.5 + 4.7 * x1 + 2.9 * x2 + 1.4 * x3
        m0 = 7.5 + 1.7 * x1 + 2.9 * x2 + 1.4 * x3
    elif scn == "B":
        m1 = 4.5 + 4.7 * x1 - 0.6 * x2 - 0.6 * x3
        m0 = 7.5 + 1.7 * x1 + 2.9 * x2 + 1.4 * x3
    else:  # discrete: scenario-A equations with x2 = x3 = 0
        m1 = 4.5 + 4.7 * x1
        m0 = 7.5 + 1.7 * x1
    return m1, m0


def design_rows(x1, x2, x3):
    n = x1.shape[0]
    one = np.ones(n)
    zero = np.zeros(n)
    d1 = np.column_stack([one, x1, zero, zero, x2, x3])
    d0 = np.column_stack([zero, zero, one, x1, x2, x3])
    return d1, d0


def main() -> None:
    rng = np.random.default_rng(SEED)

    # ---- pass 1: raw moments -------------------------------------------
    s = {
        "n": 0,
        "g_sum": np.zeros(3), "g_gram": np.zeros((3, 3)),
        "x_sum": np.zeros(3), "x_sq": np.zeros(3),
        "x12": 0.0, "x13": 0.0, "x23": 0.0,
        "atoms": np.zeros(3),  # counts of x1 = -1, 0, 1
        "z_sum": 0.0, "z_sq": 0.0, "z_phi": np.zeros(4),
        "phi_gram": np.zeros((4, 4)),
        "mp": np.zeros((6, 6)),
        "rA": np.zeros(6), "rB": np.zeros(6),
        "dA_sum": 0.0, "dA_sq": 0.0, "dB_sum": 0.0, "dB_sq": 0.0,
        "hA_phi": np.zeros(4), "hA_sq": 0.0,
        "hB_phi": np.zeros(4), "hB_sq": 0.0,
    }
    for start in range(0, M, CHUNK):
        n = min(CHUNK, M - start)
        g, x1, x2, x3, zs = draw_chunk(rng, n)
        phi = np.column_stack([np.ones(n), x1, x2, x3])
        d1, d0 = design_rows(x1, x2, x3)
        mA1, mA0 = outcome_means("A", x1, x2, x3)
        mB1, mB0 = outcome_means("B", x1, x2, x3)
        hA = 2.0 * (mA1 + mA0)  # y1/rho + y0/(1-rho) at rho = 1/2
        hB = 2.0 * (mB1 + mB0)

        s["n"] += n
        s["g_sum"] += g.sum(axis=0)
        s["g_gram"] += g.T @ g
        s["x_sum"] += np.array([x1.sum(), x2.sum(), x3.sum()])
        s["x_sq"] += np.array([(x1**2).sum(), (x2**2).sum(), (x3**2).sum()])
        s["x12"] += float(x1 @ x2)
        s["x13"] += float(x1 @ x3)
        s["x23"] += float(x2 @ x3)
        s["atoms"] += np.array([(x1 == -1).sum(), (x1 == 0).sum(), (x1 == 1).sum()])
        s["z_sum"] += zs.sum()
        s["z_sq"] += float(zs @ zs)
        s["z_phi"] += phi.T @ zs
        s["phi_gram"] += phi.T @ phi
        s["mp"] += 0.5 * (d1.T @ d1 + d0.T @ d0)
        s["rA"] += 0.5 * (d1.T @ mA1 + d0.T @ mA0)
        s["rB"] += 0.5 * (d1.T @ mB1 + d0.T @ mB0)
        s["dA_sum"] += (mA1 - mA0).sum()
        s["dA_sq"] += float((mA1 - mA0) @ (mA1 - mA0))
        s["dB_sum"] += (mB1 - mB0).sum()
        s["dB_sq"] += float((mB1 - mB0) @ (mB1 - mB0))
        s["hA_phi"] += phi.T @ hA
        s["hA_sq"] += float(hA @ hA)
        s["hB_phi"] += phi.T @ hB
        s["hB_sq"] += float(hB @ hB)

    n = float(s["n"])
    e_phi_gram = s["phi_gram"] / n           # E[phi phi^T]
    mp = s["mp"] / n                         # E[(d1 d1^T + d0 d0^T)/2]
    theta_A = np.linalg.solve(mp, s["rA"] / n)
    theta_B = np.linalg.solve(mp, s["rB"] / n)

    # balance coefficient for Z* under the constant-ratio family (rho = 1/2):
    # the weight 1/max{4*|phi|, 8} is the constant 1/8 because |phi| <= 2,
    # so the linear system reduces to a^T E[phi phi^T] = E[Z phi^T].
    a_zstar = np.linalg.solve(e_phi_gram, s["z_phi"] / n)
    e_z2 = s["z_sq"] / n
    e_zphi = s["z_phi"] / n
    sigma_zstar = 4.0 * (e_z2 - 2.0 * a_zstar @ e_zphi + a_zstar @ e_phi_gram @ a_zstar)
    sigma_zstar_a0 = 4.0 * e_z2

    # IPW asymptotic variances (constant-ratio family, noiseless outcomes);
    # a shared outcome-noise term with sd sigma adds exactly 4*sigma^2.
    def ipw_vars(h_phi, h_sq, d_sum, d_sq):
        e_hphi = h_phi / n
        e_h2 = h_sq / n
        var_d = d_sq / n - (d_sum / n) ** 2
        a = np.linalg.solve(4.0 * e_phi_gram, e_hphi)
        v_opt = var_d + 0.25 * (e_h2 - 8.0 * a @ e_hphi + 16.0 * a @ e_phi_gram @ a)
        v_a0 = var_d + 0.25 * e_h2
        return a, v_opt, v_a0, var_d

    a_ipw_A, v_opt_A, v_a0_A, var_diff_A = ipw_vars(s["hA_phi"], s["hA_sq"], s["dA_sum"], s["dA_sq"])
    a_ipw_B, v_opt_B, v_a0_B, var_diff_B = ipw_vars(s["hB_phi"], s["hB_sq"], s["dB_sum"], s["dB_sq"])

    # ---- pass 2: misspecified-model residual moments (scenario B) ------
    rng2 = np.random.default_rng(SEED)  # fresh identical stream
    t2 = {
        "u": np.zeros(6), "v": np.zeros(6),
        "uu": np.zeros((6, 6)), "vv": np.zeros((6, 6)),
        "uphi": np.zeros((6, 4)),
    }
    for start in range(0, M, CHUNK):
        k = min(CHUNK, M - start)
        g, x1, x2, x3, zs = draw_chunk(rng2, k)
        phi = np.column_stack([np.ones(k), x1, x2, x3])
        d1, d0 = design_rows(x1, x2, x3)
        mB1, mB0 = outcome_means("B", x1, x2, x3)
        r1 = mB1 - d1 @ theta_B
        r0 = mB0 - d0 @ theta_B
        u = r1[:, None] * d1 - r0[:, None] * d0
        v = r1[:, None] * d1 + r0[:, None] * d0
        t2["u"] += u.sum(axis=0)
        t2["v"] += v.sum(axis=0)
        t2["uu"] += u.T @ u
        t2["vv"] += v.T @ v
        t2["uphi"] += u.T @ phi

    e_u = t2["u"] / n
    e_v = t2["v"] / n
    e_uu = t2["uu"] / n
    e_vv = t2["vv"] / n
    e_uphi = t2["uphi"] / n
    mp_inv = np.linalg.inv(mp)

    # Z_c = -Mp^{-1} u, Z_u = -(1/2) Mp^{-1} v  (constant ratio 1/2)
    bmat = -mp_inv
    zc_phi = bmat @ e_uphi
    A_B = zc_phi @ np.linalg.inv(4.0 * e_phi_gram)
    cov_zu = 0.25 * mp_inv @ (e_vv - np.outer(e_v, e_v)) @ mp_inv
    quad = (
        bmat @ e_uu @ bmat.T
        - 4.0 * A_B @ e_uphi.T @ bmat.T
        - 4.0 * bmat @ e_uphi @ A_B.T
        + 16.0 * A_B @ e_phi_gram @ A_B.T
    )
    sigma_mest_B = cov_zu + 0.25 * quad
    sigma_mest_B = 0.5 * (sigma_mest_B + sigma_mest_B.T)

    # correctly specified model with shared unit-variance outcome noise:
    # the residual is the shared noise itself, the balance matrix A is 0,
    # and the covariance collapses to Mp^{-1} (classical least-squares form).
    sigma_mest_A_sd1 = mp_inv.copy()

    # ---- discrete scenario: exact three-atom enumeration ---------------
    probs = np.array([0.25, 0.5, 0.25])
    atoms = np.array([-1.0, 0.0, 1.0])
    mp_d = np.zeros((4, 4))
    r_d = np.zeros(4)
    for p, x in zip(probs, atoms):
        dd1 = np.array([1.0, x, 0.0, 0.0])
        dd0 = np.array([0.0, 0.0, 1.0, x])
        m1 = 4.5 + 4.7 * x
        m0 = 7.5 + 1.7 * x
        mp_d += p * 0.5 * (np.outer(dd1, dd1) + np.outer(dd0, dd0))
        r_d += p * 0.5 * (dd1 * m1 + dd0 * m0)
    theta_disc4 = np.linalg.solve(mp_d, r_d)
    assert np.allclose(theta_disc4, [4.5, 4.7, 7.5, 1.7], atol=1e-12)

    def plogistic(x):
        return min(max(1.0 / (1.0 + math.exp(-x / 2.0)), 0.2), 0.8)

    def pprobit(x):
        return min(max(statistics.NormalDist().cdf(x / 3.0), 0.2), 0.8)

    delta = {x: (4.5 - 7.5) + x * (4.7 - 1.7) for x in (-1.0, 0.0, 1.0)}
    rho_star_logistic = {str(int(x)): plogistic(d) for x, d in delta.items()}
    rho_star_probit = {str(int(x)): pprobit(d) for x, d in delta.items()}

    # mean response at the limit ratio, scenario A (same for both families):
    resp_limit = 7.5 + sum(
        p * rho_star_logistic[str(int(x))] * (-3.0 + 3.0 * x) for p, x in zip(probs, atoms)
    )

    # ---- sanity checks ---------------------------------------------------
    assert np.allclose(theta_A, [4.5, 4.7, 7.5, 1.7, 2.9, 1.4], atol=5e-3), theta_A
    assert abs(var_diff_A - 4.5) < 5e-3, var_diff_A           # Var(-3 + 3*x1), Var(x1) = 1/2
    assert v_opt_A - var_diff_A < 1e-8, v_opt_A               # scenario A: h exactly linear in phi
    assert np.max(np.abs(e_v)) < 5e-3, e_v                    # first-order condition at theta_B
    evals = np.linalg.eigvalsh(sigma_mest_B)
    assert evals.min() > -1e-10, evals

    result = {
        "meta": {
            "seed": SEED,
            "draws": M,
            "generated": datetime.date.today().isoformat(),
            "script": "tools/derive_fixtures.py",
            "mc_se_scale": 1.0 / math.sqrt(M),
        },
        "covariates": {
            "atom_probs": (s["atoms"] / n).tolist(),
            "mean": (s["x_sum"] / n).tolist(),
            "e_x1_sq": s["x_sq"][0] / n,
            "e_x2_sq": s["x_sq"][1] / n,
            "e_x3_sq": s["x_sq"][2] / n,
            "e_x1_x2": s["x12"] / n,
            "e_x1_x3": s["x13"] / n,
            "e_x2_x3": s["x23"] / n,
            "pre_transform_corr": (
                (s["g_gram"] / n - np.outer(s["g_sum"] / n, s["g_sum"] / n))
            ).tolist(),
            "phi_gram": e_phi_gram.tolist(),
        },
        "zstar": {
            "mean": s["z_sum"] / n,
            "second_moment": e_z2,
            "balance_a": a_zstar.tolist(),
            "sigma_sq": float(sigma_zstar),
            "sigma_sq_a0": float(sigma_zstar_a0),
        },
        "theta_star": {
            "A": theta_A.tolist(),
            "B": theta_B.tolist(),
            "Discrete4": theta_disc4.tolist(),
        },
        "ipw": {
            "A": {
                "a": a_ipw_A.tolist(),
                "v_opt_noiseless": float(v_opt_A),
                "v_a0_noiseless": float(v_a0_A),
                "var_diff": float(var_diff_A),
                "noise_add_per_sigma_sq": 4.0,
            },
            "B": {
                "a": a_ipw_B.tolist(),
                "v_opt_noiseless": float(v_opt_B),
                "v_a0_noiseless": float(v_a0_B),
                "var_diff": float(var_diff_B),
                "noise_add_per_sigma_sq": 4.0,
            },
        },
        "mest": {
            "mp": mp.tolist(),
            "sigma_A_shared_noise_sd1": sigma_mest_A_sd1.tolist(),
            "sigma_B_noiseless": sigma_mest_B.tolist(),
            "A_B_noiseless": A_B.tolist(),
        },
        "discrete": {
            "rho_star_logistic": rho_star_logistic,
            "rho_star_probit": rho_star_probit,
            "delta_by_atom": {str(int(k)): v for k, v in delta.items()},
        },
        "limits": {
            "response_at_target_A": float(resp_limit),
            "true_ate": -3.0,
        },
    }

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(result, indent=2) + "\n")
    print(f"wrote {OUT}")
    print("theta_A ", np.round(theta_A, 4))
    print("theta_B ", np.round(theta_B, 4))
    print("a(Z*)   ", np.round(a_zstar, 4), " sigma^2", round(float(sigma_zstar), 5),
          " a0", round(float(sigma_zstar_a0), 5))
    print("ipw A   opt", round(float(v_opt_A), 4), " a0", round(float(v_a0_A), 4))
    print("ipw B   opt", round(float(v_opt_B), 4), " a0", round(float(v_a0_B), 4))
    print("rho* logistic", rho_star_logistic, " response limit", round(float(resp_limit), 4))


if __name__ == "__main__":
    main()
