"""Optimality and diagnostic measurements.

Stationarity is measured by the proximal gradient mapping
G_beta(z) = (z - prox_{beta h}(z - beta grad f(z))) / beta, which vanishes
exactly at stationary points of the composite objective. This module also
evaluates the step-size conditions and residual bound of the convergence
theorem, the Lyapunov potential used as a descent diagnostic, and the
uplink/downlink byte accounting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .compressors import DENSE_ENTRY_BYTES, payload_bytes
from .problems import (
    FULL,
    HETERO_QUADRATIC,
    FederatedProblem,
    client_gradient,
    full_global_gradient,
    objective_value,
    per_sample_gradients,
)

if TYPE_CHECKING:  # pragma: no cover
    from .algorithms import HyperParams, RoundTranscript


@dataclass
class MetricsRow:
    """One measurement of the global model; t = 0 is the initial model."""

    t: int
    F: float
    prox_grad_sq: float
    uplink_bytes_cum: int
    downlink_bytes_cum: int
    nnz: int
    lyapunov: float | None
    condition_ok: bool


@dataclass
class MetricsSeries:
    algorithm: str
    seed: int
    smoothness: float
    contraction: float  # q^2 of the uplink compressor (0 when uncompressed)
    beta: float
    conditions: "StepConditionReport | None"
    rows: list[MetricsRow]


@dataclass(frozen=True)
class StepConditionReport:
    """The three sufficient step-size conditions of the convergence analysis."""

    beta_bound: float
    beta_ok: bool
    eta_g_bound: float
    eta_g_ok: bool
    alpha_bound: float
    alpha_ok: bool

    @property
    def all_ok(self) -> bool:
        return self.beta_ok and self.eta_g_ok and self.alpha_ok


def prox_gradient_mapping(
    prob: FederatedProblem, reg, z: np.ndarray, beta: float
) -> np.ndarray:
    """G_beta(z), computed with the exact full global gradient."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    g = full_global_gradient(prob, z)
    return (z - reg.prox(beta, z - beta * g)) / beta


def check_step_conditions(hp: "HyperParams", L: float, q: float) -> StepConditionReport:
    """Evaluate beta <= min(eta^2, (1-q)^2) / (25 L),
    eta_g >= sqrt(16 (1-q)^2 + 161 eta^2) / (5 eta (1-q)),
    alpha <= 1 / (8 K L). Never aborts; callers decide what to do."""
    if not L > 0:
        raise ValueError("smoothness constant must be positive")
    if not 0.0 <= q < 1.0:
        raise ValueError("compression factor q must lie in [0, 1)")
    eta = hp.eta
    beta_bound = min(eta * eta, (1.0 - q) ** 2) / (25.0 * L)
    eta_g_bound = math.sqrt(16.0 * (1.0 - q) ** 2 + 161.0 * eta * eta) / (5.0 * eta * (1.0 - q))
    alpha_bound = 1.0 / (8.0 * hp.K * L)
    return StepConditionReport(
        beta_bound=beta_bound,
        beta_ok=hp.beta <= beta_bound,
        eta_g_bound=eta_g_bound,
        eta_g_ok=hp.eta_g >= eta_g_bound,
        alpha_bound=alpha_bound,
        alpha_ok=hp.alpha <= alpha_bound,
    )


def lyapunov_diagnostic(
    prob: FederatedProblem,
    reg,
    hp: "HyperParams",
    q: float,
    z: np.ndarray,
    z_prev: np.ndarray | None,
    client_vs: Sequence[np.ndarray],
    client_cs: Sequence[np.ndarray],
) -> float:
    """Single-trajectory Lyapunov potential at the current round.

    Psi = F(z) + (70 eta beta / (1-q)^2) * avg_i ||v_i - grad f_i(z_prev)||^2
            + (8 beta / eta) * ||vbar - grad f(z_prev)||^2
            + (17 beta / (1-q)) * avg_i ||v_i - c_i||^2

    with expectations replaced by realized values. z_prev = None marks the
    initial round, where only F(z) is available.
    """
    F = objective_value(prob, reg, z)
    if z_prev is None:
        return F
    N = prob.n_clients
    beta, eta = hp.beta, hp.eta
    local_est = 0.0
    feedback = 0.0
    vbar = np.zeros(prob.dim)
    gbar = np.zeros(prob.dim)
    for i in range(N):
        gi = client_gradient(prob, i, z_prev)
        local_est += float(np.sum((client_vs[i] - gi) ** 2))
        feedback += float(np.sum((client_vs[i] - client_cs[i]) ** 2))
        vbar += client_vs[i]
        gbar += gi
    vbar /= N
    gbar /= N
    global_est = float(np.sum((vbar - gbar) ** 2))
    return (
        F
        + (70.0 * eta * beta / (1.0 - q) ** 2) * (local_est / N)
        + (8.0 * beta / eta) * global_est
        + (17.0 * beta / (1.0 - q)) * (feedback / N)
    )


def theorem_residual_bound(
    hp: "HyperParams",
    L: float,
    q: float,
    B_h: float,
    sigma_sq: float,
    N: int,
    Psi0: float,
    T: int,
) -> float:
    """Right-hand side of the convergence theorem: the ceiling on the running
    mean of ||G_beta||^2 after T rounds. gamma = 0.15."""
    gamma = 0.15
    eta = hp.eta
    beta = hp.beta
    c_stoc = 6.7 * (17.0 * eta / N + 14.0 * eta**2 / (1.0 - q) + 140.0 * eta**3 / (1.0 - q) ** 2)
    c_approx = (18.4 / gamma) * (16.0 + 161.0 * eta**2 / (1.0 - q) ** 2)
    bound = Psi0 / (gamma * beta * T)
    if hp.B != FULL and sigma_sq > 0:
        bound += c_stoc * sigma_sq / (hp.K * hp.B)
    bound += c_approx * (L * beta / hp.eta_g) ** 2 * B_h**2
    return bound


def estimate_gradient_variance(prob: FederatedProblem, z: np.ndarray) -> float:
    """Empirical sigma^2: max over clients of per-sample gradient variance at z
    (mean squared deviation of single-sample gradients from the full one)."""
    if prob.loss.variant == HETERO_QUADRATIC:
        return 0.0
    worst = 0.0
    for i in range(prob.n_clients):
        dev = per_sample_gradients(prob, i, z) - client_gradient(prob, i, z)[None, :]
        worst = max(worst, float(np.mean(np.sum(dev * dev, axis=1))))
    return worst


def comm_accounting(
    transcripts: Sequence["RoundTranscript"], dim: int, include_bootstrap: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (uplink, downlink) byte series over the recorded rounds.

    Uplink sums the per-client payload costs; downlink is one dense broadcast
    of the model per round, plus the out-of-band round-0 bootstrap broadcast.
    """
    uplink = np.zeros(len(transcripts), dtype=np.int64)
    downlink = np.zeros(len(transcripts), dtype=np.int64)
    up_cum = 0
    down_cum = DENSE_ENTRY_BYTES * dim if include_bootstrap else 0
    for t, tr in enumerate(transcripts):
        up_cum += sum(payload_bytes(pl) for pl in tr.uplink_payloads)
        down_cum += payload_bytes(tr.downlink_payload)
        uplink[t] = up_cum
        downlink[t] = down_cum
    return uplink, downlink
