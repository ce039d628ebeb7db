"""Client/server round state machines.

Three optimizers are implemented over the same problem/regularizer surface:

* run_fedcef: compressed proximal federated optimization with decoupled
  pre/post-proximal local states, momentum error-feedback uplink compression,
  control-variate drift correction, and pre-proximal downlink broadcasts from
  which clients reconstruct the global control without extra traffic.
* run_prox_fedavg: the naive baseline; clients run local proximal SGD and the
  server averages their post-proximal models (dense, uncompressed).
* run_centralized_pgd: exact proximal gradient descent on the global
  objective, used as the reduction oracle.

Local update, per client i, round t, local steps k = 0..K-1:

    xhat_i^{t,0} = z^t,  x_i^{t,0} = z^t
    xhat_i^{t,k+1} = xhat_i^{t,k} - alpha * (g_i(x_i^{t,k}) + c^t - c_i^t)
    x_i^{t,k+1}    = prox_{(k+1) alpha h}(xhat_i^{t,k+1})

The pre-proximal state is a linear accumulator:
(xhat^{t,0} - xhat^{t,K}) / (alpha K) + c_i^t - c^t equals the round's mean
stochastic gradient up to float rounding, which is what the momentum
estimator v_i tracks and the compressor transmits as a deviation from c_i.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .compressors import (
    CompressorSpec,
    DENSE_ENTRY_BYTES,
    SparsePayload,
    compress,
    contraction_factor,
    dense_payload,
    payload_bytes,
)
from .core import NonFiniteError, RngStream, derive_stream, inf_norm
from .metrics import (
    MetricsRow,
    MetricsSeries,
    check_step_conditions,
    lyapunov_diagnostic,
    prox_gradient_mapping,
)
from .problems import FULL, FederatedProblem, full_global_gradient, objective_value, stochastic_gradient
from .regularizers import Regularizer


class StepConditionWarning(UserWarning):
    """Step sizes violate the sufficient convergence conditions."""


@dataclass(frozen=True)
class HyperParams:
    """Round-level hyper parameters. The effective global step
    beta = alpha * eta_g * K is always derived, never set independently."""

    alpha: float
    eta_g: float = 1.0
    K: int = 1
    eta: float = 1.0
    B: int | str = FULL
    T: int = 1

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.eta_g > 0:
            raise ValueError("eta_g must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.B != FULL and (not isinstance(self.B, int) or self.B < 1):
            raise ValueError("B must be a positive integer or FULL")
        if self.T < 1:
            raise ValueError("T must be >= 1")

    @property
    def beta(self) -> float:
        return self.alpha * self.eta_g * self.K


@dataclass
class ClientState:
    """Per-client algorithm state between rounds."""

    x_hat: np.ndarray  # pre-proximal accumulator, xhat_i^{t,K} after a round
    x_hat_start: np.ndarray  # xhat_i^{t,0} snapshot for the momentum update
    x: np.ndarray  # post-proximal local model
    c_local: np.ndarray  # local control c_i
    v: np.ndarray  # momentum estimator v_i
    z_prev: np.ndarray  # last known global model
    c_known: np.ndarray  # client's reconstructed copy of the global control

    @classmethod
    def initial(cls, z0: np.ndarray) -> "ClientState":
        zeros = np.zeros_like(z0)
        return cls(
            x_hat=z0.copy(),
            x_hat_start=z0.copy(),
            x=z0.copy(),
            c_local=zeros.copy(),
            v=zeros.copy(),
            z_prev=z0.copy(),
            c_known=zeros.copy(),
        )


@dataclass
class ServerState:
    z: np.ndarray
    c_global: np.ndarray
    round: int
    n_clients: int


@dataclass
class LocalUpdateRecord:
    """Raw material for replaying one client's local pass in tests."""

    gradients: list[np.ndarray]
    x_hat_start: np.ndarray
    x_hat_end: np.ndarray
    c_local_before: np.ndarray
    c_known_used: np.ndarray


@dataclass
class ClientRoundDetail:
    local: LocalUpdateRecord
    v_after: np.ndarray
    c_local_after: np.ndarray
    c_reconstructed: np.ndarray | None = None


@dataclass
class RoundTranscript:
    round: int
    uplink_payloads: list[SparsePayload]
    downlink_payload: SparsePayload
    uplink_bytes: int
    downlink_bytes: int
    clients: list[ClientRoundDetail] = field(default_factory=list)
    server_c_after: np.ndarray | None = None


@dataclass
class RunResult:
    series: MetricsSeries
    z_history: list[np.ndarray]
    transcripts: list[RoundTranscript] | None
    server: ServerState | None
    clients: list[ClientState] | None


def local_update(
    cs: ClientState,
    z: np.ndarray,
    c_global: np.ndarray,
    prob: FederatedProblem,
    client: int,
    reg: Regularizer,
    hp: HyperParams,
    rng: RngStream | None,
) -> tuple[ClientState, LocalUpdateRecord]:
    """Run K decoupled proximal steps from z; the k = 0 prox threshold is zero,
    so the first gradient is evaluated at x_i^{t,0} = z exactly."""
    x_hat = z.copy()
    x = z.copy()
    gradients: list[np.ndarray] = []
    for k in range(hp.K):
        g = stochastic_gradient(prob, client, x, hp.B, rng)
        gradients.append(g)
        x_hat = x_hat - hp.alpha * (g + c_global - cs.c_local)
        if not np.isfinite(x_hat).all():
            raise NonFiniteError(f"client {client}: non-finite state at local step {k}")
        x = reg.prox((k + 1) * hp.alpha, x_hat)
    record = LocalUpdateRecord(
        gradients=gradients,
        x_hat_start=z.copy(),
        x_hat_end=x_hat,
        c_local_before=cs.c_local.copy(),
        c_known_used=c_global.copy(),
    )
    new_state = replace(cs, x_hat=x_hat, x_hat_start=z.copy(), x=x)
    return new_state, record


def client_uplink(
    cs: ClientState, hp: HyperParams, spec: CompressorSpec, rng: RngStream | None
) -> tuple[SparsePayload, ClientState]:
    """Momentum update, deviation compression, and the error feedback step
    c_i <- c_i + densify(payload)."""
    drift = (cs.x_hat_start - cs.x_hat) / (hp.alpha * hp.K) + cs.c_local - cs.c_known
    v_new = (1.0 - hp.eta) * cs.v + hp.eta * drift
    payload, dense = compress(spec, v_new - cs.c_local, rng)
    c_new = cs.c_local + dense
    return payload, replace(cs, v=v_new, c_local=c_new)


def server_aggregate(
    ss: ServerState, payloads: list[SparsePayload], hp: HyperParams
) -> tuple[np.ndarray, ServerState]:
    """c <- c + (1/N) sum_i densify(payload_i), then the pre-proximal broadcast
    z_tilde = z - beta * c. The server's z stays at z^t until finalize."""
    if len(payloads) != ss.n_clients:
        raise ValueError(f"expected {ss.n_clients} payloads, got {len(payloads)}")
    total = np.zeros_like(ss.z)
    for pl in payloads:  # ascending client order, part of the replay contract
        total += pl.densify()
    c_new = ss.c_global + total / ss.n_clients
    z_tilde = ss.z - hp.beta * c_new
    return z_tilde, replace(ss, c_global=c_new)


def client_downlink(
    cs: ClientState, z_tilde: np.ndarray, reg: Regularizer, hp: HyperParams
) -> tuple[ClientState, np.ndarray]:
    """Reconstruct the global control from the pre-proximal broadcast and apply
    the global proximal step locally."""
    if hp.beta == 0:
        raise ValueError("beta must be nonzero for downlink reconstruction")
    c_rec = (cs.z_prev - z_tilde) / hp.beta
    z_new = reg.prox(hp.beta, z_tilde)
    return replace(cs, z_prev=z_new, c_known=c_rec), c_rec


def server_finalize(
    ss: ServerState, z_tilde: np.ndarray, reg: Regularizer, hp: HyperParams
) -> ServerState:
    """Mirror the client-side prox so the server holds z^{t+1} for the next
    broadcast baseline."""
    return replace(ss, z=reg.prox(hp.beta, z_tilde), round=ss.round + 1)


def _nnz(z: np.ndarray) -> int:
    return int(np.count_nonzero(z))


def run_fedcef(
    prob: FederatedProblem,
    reg: Regularizer,
    hp: HyperParams,
    spec: CompressorSpec,
    seed: int,
    z0: np.ndarray | None = None,
    record_transcripts: bool = False,
    lyapunov: bool = False,
    debug_checks: bool = False,
) -> RunResult:
    """Run T rounds; fully deterministic per seed.

    The emitted series has T + 1 rows: row 0 measures the initial model right
    after the out-of-band bootstrap broadcast (charged to downlink), row t
    measures the model produced by round t - 1. The running mean of
    prox_grad_sq over rows 0..T-1 is therefore exactly the quantity bounded by
    the convergence theorem.
    """
    p = prob.dim
    N = prob.n_clients
    z = np.zeros(p) if z0 is None else np.array(z0, dtype=np.float64, copy=True)
    L = prob.smoothness
    q = float(np.sqrt(contraction_factor(spec, p)))
    report = check_step_conditions(hp, L, q)
    if not report.all_ok:
        warnings.warn(
            "step sizes violate the sufficient convergence conditions; proceeding",
            StepConditionWarning,
            stacklevel=2,
        )
    server = ServerState(z=z.copy(), c_global=np.zeros(p), round=0, n_clients=N)
    clients = [ClientState.initial(z) for _ in range(N)]
    transcripts: list[RoundTranscript] = []

    uplink_cum = 0
    downlink_cum = DENSE_ENTRY_BYTES * p  # bootstrap broadcast of z^0
    rows = [
        _measure(prob, reg, hp, q, server.z, None, clients, 0, uplink_cum, downlink_cum, report.all_ok, lyapunov)
    ]
    z_hist = [server.z.copy()]

    for t in range(hp.T):
        z_round = server.z
        payloads: list[SparsePayload] = []
        details: list[ClientRoundDetail] = []
        for i in range(N):
            gstream = derive_stream(seed, f"client/{i}/round/{t}/grad")
            cstream = derive_stream(seed, f"client/{i}/round/{t}/compress")
            cs, record = local_update(
                clients[i], clients[i].z_prev, clients[i].c_known, prob, i, reg, hp, gstream
            )
            payload, cs = client_uplink(cs, hp, spec, cstream)
            payloads.append(payload)
            clients[i] = cs
            if record_transcripts:
                details.append(
                    ClientRoundDetail(local=record, v_after=cs.v.copy(), c_local_after=cs.c_local.copy())
                )
        z_tilde, server = server_aggregate(server, payloads, hp)
        for i in range(N):
            clients[i], c_rec = client_downlink(clients[i], z_tilde, reg, hp)
            if record_transcripts:
                details[i].c_reconstructed = c_rec.copy()
        server = server_finalize(server, z_tilde, reg, hp)

        if debug_checks:
            mean_c = np.zeros(p)
            for cs in clients:
                mean_c += cs.c_local
            mean_c /= N
            gap = inf_norm(server.c_global - mean_c)
            if gap > 1e-10:
                raise AssertionError(f"round {t}: server control drifted from client mean by {gap:.3e}")
            scale = 1e-10 * (1.0 + inf_norm(server.c_global))
            rec_gap = max(inf_norm(cs.c_known - server.c_global) for cs in clients)
            if rec_gap > scale:
                raise AssertionError(f"round {t}: control reconstruction off by {rec_gap:.3e}")

        up = sum(payload_bytes(pl) for pl in payloads)
        down_payload = dense_payload(z_tilde)
        uplink_cum += up
        downlink_cum += payload_bytes(down_payload)
        if record_transcripts:
            transcripts.append(
                RoundTranscript(
                    round=t,
                    uplink_payloads=payloads,
                    downlink_payload=down_payload,
                    uplink_bytes=up,
                    downlink_bytes=payload_bytes(down_payload),
                    clients=details,
                    server_c_after=server.c_global.copy(),
                )
            )
        rows.append(
            _measure(
                prob, reg, hp, q, server.z, z_round, clients, t + 1, uplink_cum, downlink_cum, report.all_ok, lyapunov
            )
        )
        z_hist.append(server.z.copy())

    series = MetricsSeries("fedcef", seed, L, q * q, hp.beta, report, rows)
    return RunResult(series, z_hist, transcripts if record_transcripts else None, server, clients)


def _measure(
    prob: FederatedProblem,
    reg: Regularizer,
    hp: HyperParams,
    q: float,
    z: np.ndarray,
    z_prev: np.ndarray | None,
    clients: list[ClientState] | None,
    t: int,
    uplink_cum: int,
    downlink_cum: int,
    condition_ok: bool,
    lyapunov: bool,
) -> MetricsRow:
    G = prox_gradient_mapping(prob, reg, z, hp.beta)
    lyap = None
    if lyapunov:
        if clients is None:
            lyap = objective_value(prob, reg, z)
        else:
            lyap = lyapunov_diagnostic(
                prob, reg, hp, q, z, z_prev, [cs.v for cs in clients], [cs.c_local for cs in clients]
            )
    return MetricsRow(
        t=t,
        F=objective_value(prob, reg, z),
        prox_grad_sq=float(np.sum(G * G)),
        uplink_bytes_cum=uplink_cum,
        downlink_bytes_cum=downlink_cum,
        nnz=_nnz(z),
        lyapunov=lyap,
        condition_ok=condition_ok,
    )


def run_prox_fedavg(
    prob: FederatedProblem,
    reg: Regularizer,
    hp: HyperParams,
    seed: int,
    z0: np.ndarray | None = None,
) -> RunResult:
    """Naive baseline: K local proximal SGD steps per client, then the server
    averages the post-proximal models. Transmits dense models both ways."""
    p = prob.dim
    N = prob.n_clients
    z = np.zeros(p) if z0 is None else np.array(z0, dtype=np.float64, copy=True)
    L = prob.smoothness
    report = check_step_conditions(hp, L, 0.0)
    uplink_cum = 0
    downlink_cum = DENSE_ENTRY_BYTES * p
    rows = [
        _measure(prob, reg, hp, 0.0, z, None, None, 0, uplink_cum, downlink_cum, report.all_ok, False)
    ]
    z_hist = [z.copy()]
    for t in range(hp.T):
        acc = np.zeros(p)
        for i in range(N):
            rng = derive_stream(seed, f"client/{i}/round/{t}/grad")
            x = z.copy()
            for k in range(hp.K):
                g = stochastic_gradient(prob, i, x, hp.B, rng)
                x = reg.prox(hp.alpha, x - hp.alpha * g)
                if not np.isfinite(x).all():
                    raise NonFiniteError(f"client {i}: non-finite state at local step {k}")
            acc += x
        z = acc / N
        uplink_cum += N * DENSE_ENTRY_BYTES * p
        downlink_cum += DENSE_ENTRY_BYTES * p
        rows.append(
            _measure(prob, reg, hp, 0.0, z, None, None, t + 1, uplink_cum, downlink_cum, report.all_ok, False)
        )
        z_hist.append(z.copy())
    series = MetricsSeries("prox_fedavg", seed, L, 0.0, hp.beta, report, rows)
    return RunResult(series, z_hist, None, None, None)


def run_centralized_pgd(
    prob: FederatedProblem,
    reg: Regularizer,
    step: float,
    T: int,
    z0: np.ndarray | None = None,
) -> list[np.ndarray]:
    """z <- prox_{step h}(z - step grad f(z)) with the exact global gradient;
    returns the whole trajectory [z^0, ..., z^T]."""
    if not step > 0:
        raise ValueError("step must be positive")
    z = np.zeros(prob.dim) if z0 is None else np.array(z0, dtype=np.float64, copy=True)
    traj = [z.copy()]
    for _ in range(T):
        g = full_global_gradient(prob, z)
        z = reg.prox(step, z - step * g)
        traj.append(z.copy())
    return traj
