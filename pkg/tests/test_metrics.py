import math

import numpy as np
import pytest

from fedcef.algorithms import HyperParams, RoundTranscript
from fedcef.compressors import CompressorSpec, compress, dense_payload
from fedcef.core import derive_stream
from fedcef.metrics import (
    StepConditionReport,
    check_step_conditions,
    comm_accounting,
    estimate_gradient_variance,
    lyapunov_diagnostic,
    prox_gradient_mapping,
    theorem_residual_bound,
)
from fedcef.problems import (
    FederatedProblem,
    LossKind,
    PartitionSpec,
    full_global_gradient,
    generate_synthetic,
)
from fedcef.regularizers import Regularizer
from tests.test_regularizers import grid_prox_l1


def logistic_problem(seed=3, p=6, samples=80, N=3):
    return generate_synthetic(
        "logistic", p, samples, N, PartitionSpec("iid"), derive_stream(seed, "problem")
    )


def test_mapping_equals_gradient_without_regularizer():
    prob = logistic_problem()
    reg = Regularizer.zero()
    rng = np.random.default_rng(0)
    for _ in range(100):
        z = rng.standard_normal(prob.dim)
        beta = rng.uniform(0.05, 2.0)
        G = prox_gradient_mapping(prob, reg, z, beta)
        assert np.max(np.abs(G - full_global_gradient(prob, z))) <= 1e-12


def test_mapping_one_dimensional_lasso():
    # f = 0.5*(z - 2)^2 as a single-sample squared error with a=1, b=2
    prob = FederatedProblem(
        LossKind("squared_error"), 1, [np.array([[1.0]])], [np.array([2.0])]
    )
    reg = Regularizer.l1(1.0)
    G = prox_gradient_mapping(prob, reg, np.array([0.0]), 1.0)
    assert G[0] == pytest.approx(-1.0)
    # cross-check the inner prox against the grid argmin oracle
    inner = grid_prox_l1(np.array([2.0]), 1.0, 1.0)
    assert (0.0 - inner[0]) / 1.0 == pytest.approx(-1.0, abs=1e-4)


def test_mapping_vanishes_at_hetero_optimum():
    prob = generate_synthetic(
        "hetero_quadratic", 6, 4, 4, PartitionSpec("iid"), derive_stream(8, "problem")
    )
    H, m = prob.loss.curvatures, prob.loss.centers
    xstar = (H * m).sum(axis=0) / H.sum(axis=0)
    G = prox_gradient_mapping(prob, Regularizer.zero(), xstar, 0.1)
    assert np.max(np.abs(G)) <= 1e-10


def test_mapping_invariant_to_objective_shift():
    # duplicating each sample with labels b +/- d shifts the objective by d^2/2
    # while leaving every gradient unchanged
    rng = np.random.default_rng(4)
    a = rng.standard_normal((30, 5))
    b = rng.standard_normal(30)
    d = 3.0
    base = FederatedProblem(LossKind("squared_error"), 5, [a], [b])
    shifted = FederatedProblem(
        LossKind("squared_error"),
        5,
        [np.vstack([a, a])],
        [np.concatenate([b + d, b - d])],
    )
    reg = Regularizer.l1(0.2)
    z = rng.standard_normal(5)
    from fedcef.problems import objective_value

    assert objective_value(shifted, reg, z) == pytest.approx(
        objective_value(base, reg, z) + 0.5 * d * d, rel=1e-12
    )
    Ga = prox_gradient_mapping(base, reg, z, 0.3)
    Gb = prox_gradient_mapping(shifted, reg, z, 0.3)
    assert np.max(np.abs(Ga - Gb)) <= 1e-12


def test_step_condition_bounds():
    hp = HyperParams(alpha=0.001, eta_g=3.0, K=10, eta=1.0, B="full", T=1)
    rep = check_step_conditions(hp, L=1.0, q=0.0)
    assert rep.beta_bound == pytest.approx(0.04)
    assert rep.eta_g_bound == pytest.approx(math.sqrt(177) / 5)
    rep2 = check_step_conditions(HyperParams(alpha=0.001, K=10, T=1), L=2.0, q=0.0)
    assert rep2.alpha_bound == pytest.approx(1.0 / 160.0)
    assert isinstance(rep, StepConditionReport)


def test_step_condition_bounds_are_positive():
    rng = np.random.default_rng(5)
    for _ in range(50):
        hp = HyperParams(
            alpha=float(rng.uniform(1e-5, 1.0)),
            eta_g=float(rng.uniform(0.1, 5.0)),
            K=int(rng.integers(1, 40)),
            eta=float(rng.uniform(1e-3, 1.0)),
            B="full",
            T=1,
        )
        rep = check_step_conditions(hp, L=float(rng.uniform(1e-3, 50.0)), q=float(rng.uniform(0, 0.99)))
        assert rep.beta_bound > 0 and rep.eta_g_bound > 0 and rep.alpha_bound > 0


def test_step_condition_flags():
    hp = HyperParams(alpha=0.0001, eta_g=3.0, K=10, eta=1.0, B="full", T=1)
    rep = check_step_conditions(hp, L=1.0, q=0.0)
    assert rep.beta_ok and rep.eta_g_ok and rep.alpha_ok and rep.all_ok
    hp_bad = HyperParams(alpha=0.1, eta_g=0.5, K=10, eta=1.0, B="full", T=1)
    rep = check_step_conditions(hp_bad, L=1.0, q=0.0)
    assert not rep.beta_ok and not rep.eta_g_ok and not rep.alpha_ok and not rep.all_ok


def test_residual_bound_structure():
    hp = HyperParams(alpha=0.01, eta_g=1.0, K=1, eta=1.0, B=1, T=1)
    # sigma = 0, B_h = 0: pure Psi0 / (0.15 beta T)
    assert theorem_residual_bound(hp, 1.0, 0.0, 0.0, 0.0, 1, 3.0, 100) == pytest.approx(
        3.0 / (0.15 * 0.01 * 100)
    )
    # doubling T halves it
    b1 = theorem_residual_bound(hp, 1.0, 0.0, 0.0, 0.0, 1, 3.0, 100)
    b2 = theorem_residual_bound(hp, 1.0, 0.0, 0.0, 0.0, 1, 3.0, 200)
    assert b2 == pytest.approx(b1 / 2)
    # stochastic coefficient: eta=1, q=0, N=1 gives 6.7 * 171
    stoc = theorem_residual_bound(hp, 1.0, 0.0, 0.0, 1.0, 1, 0.0, 100)
    assert stoc == pytest.approx(6.7 * 171.0)
    # FULL batch drops the stochastic term regardless of sigma
    hp_full = HyperParams(alpha=0.01, eta_g=1.0, K=1, eta=1.0, B="full", T=1)
    assert theorem_residual_bound(hp_full, 1.0, 0.0, 0.0, 5.0, 1, 0.0, 100) == 0.0


def test_lyapunov_dominates_objective_and_degenerates_cleanly():
    prob = logistic_problem(seed=6)
    reg = Regularizer.l1(0.01)
    hp = HyperParams(alpha=0.01, eta_g=1.0, K=5, eta=0.5, B="full", T=1)
    rng = np.random.default_rng(2)
    from fedcef.problems import client_gradient, objective_value

    for _ in range(20):
        z = rng.standard_normal(prob.dim)
        zp = rng.standard_normal(prob.dim)
        vs = [rng.standard_normal(prob.dim) for _ in range(prob.n_clients)]
        cs = [rng.standard_normal(prob.dim) for _ in range(prob.n_clients)]
        psi = lyapunov_diagnostic(prob, reg, hp, 0.3, z, zp, vs, cs)
        assert psi >= objective_value(prob, reg, z)
    # all penalty terms vanish when v_i = grad f_i(z_prev) = c_i and vbar = grad f
    z = rng.standard_normal(prob.dim)
    zp = z.copy()
    vs = [client_gradient(prob, i, zp) for i in range(prob.n_clients)]
    psi = lyapunov_diagnostic(prob, reg, hp, 0.0, z, zp, vs, [v.copy() for v in vs])
    assert psi == pytest.approx(objective_value(prob, reg, z), rel=1e-12)
    # initial round: objective only
    assert lyapunov_diagnostic(prob, reg, hp, 0.0, z, None, [], []) == pytest.approx(
        objective_value(prob, reg, z)
    )


def test_gradient_variance_estimate():
    prob = logistic_problem(seed=10)
    z = np.zeros(prob.dim)
    sigma_sq = estimate_gradient_variance(prob, z)
    assert sigma_sq > 0
    hetero = generate_synthetic(
        "hetero_quadratic", 4, 3, 3, PartitionSpec("iid"), derive_stream(1, "problem")
    )
    assert estimate_gradient_variance(hetero, z[:4]) == 0.0


def _transcript(round_idx, payloads, dim):
    return RoundTranscript(
        round=round_idx,
        uplink_payloads=payloads,
        downlink_payload=dense_payload(np.zeros(dim)),
        uplink_bytes=0,
        downlink_bytes=0,
    )


def test_comm_accounting_formulas():
    p, N, k, T = 1000, 10, 10, 3
    rng = np.random.default_rng(0)
    spec = CompressorSpec("topk", k)
    transcripts = []
    for t in range(T):
        payloads = [compress(spec, rng.standard_normal(p))[0] for _ in range(N)]
        transcripts.append(_transcript(t, payloads, p))
    up, down = comm_accounting(transcripts, p)
    assert np.array_equal(up, [800 * (t + 1) for t in range(T)])  # N * k * 8 per round
    # 4 bytes per element per round, plus the bootstrap broadcast
    assert np.array_equal(down, [4000 * (t + 1) + 4000 for t in range(T)])
    up_nb, down_nb = comm_accounting(transcripts, p, include_bootstrap=False)
    assert down_nb[0] == 4000
    # identity uplink is dense: 4 bytes per element
    id_payloads = [compress(CompressorSpec("identity"), rng.standard_normal(p))[0] for _ in range(N)]
    up_id, _ = comm_accounting([_transcript(0, id_payloads, p)], p)
    assert up_id[0] == N * p * 4
