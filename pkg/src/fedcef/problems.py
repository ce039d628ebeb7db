"""Synthetic federated problems: data generation, non-IID partitioning,
gradient oracles, and smoothness-constant estimation.

Four smooth loss families are provided. `squared_error`, `logistic` and
`sigmoid_nonconvex` are finite-sum losses over (feature row, label) samples;
`hetero_quadratic` gives each client its own diagonal quadratic
f_i(x) = 0.5 * sum_j H_ij (x_j - m_ij)^2, which makes naive-averaging drift
large and measurable while keeping the optimum in closed form.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import RngStream, ensure_finite

SQUARED_ERROR = "squared_error"
LOGISTIC = "logistic"
SIGMOID_NONCONVEX = "sigmoid_nonconvex"
HETERO_QUADRATIC = "hetero_quadratic"
LOSS_VARIANTS = (SQUARED_ERROR, LOGISTIC, SIGMOID_NONCONVEX, HETERO_QUADRATIC)

IID = "iid"
DIRICHLET = "dirichlet"

# Batch-size sentinel: use the exact local gradient instead of sampling.
FULL = "full"

# Curvature factors multiplying the data spectral norm lambda_max(A^T A)/n.
# logistic: max sigmoid' = 1/4; sigmoid_nonconvex: max |sigmoid''| = 1/(6*sqrt(3)).
_CURVATURE_FACTOR = {
    SQUARED_ERROR: 1.0,
    LOGISTIC: 0.25,
    SIGMOID_NONCONVEX: 1.0 / (6.0 * math.sqrt(3.0)),
}

_POWER_ITER_MAX = 100
_POWER_ITER_RTOL = 1e-9


class PartitionError(RuntimeError):
    """Raised when a nonempty-per-client partition cannot be produced."""


@dataclass(frozen=True)
class PartitionSpec:
    mode: str = IID
    alpha_d: float = 0.6

    def __post_init__(self) -> None:
        if self.mode not in (IID, DIRICHLET):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.mode == DIRICHLET and not self.alpha_d > 0:
            raise ValueError("dirichlet concentration must be positive")


@dataclass(frozen=True)
class LossKind:
    variant: str
    curvatures: np.ndarray | None = None  # hetero_quadratic: (N, p), > 0
    centers: np.ndarray | None = None  # hetero_quadratic: (N, p)

    def __post_init__(self) -> None:
        if self.variant not in LOSS_VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if self.variant == HETERO_QUADRATIC:
            if self.curvatures is None or self.centers is None:
                raise ValueError("hetero_quadratic needs curvatures and centers")
            if self.curvatures.shape != self.centers.shape:
                raise ValueError("curvature/center shape mismatch")
            if not np.all(self.curvatures > 0):
                raise ValueError("hetero_quadratic curvatures must be strictly positive")


@dataclass
class FederatedProblem:
    """N client shards plus a smooth loss; gradient oracles live below."""

    loss: LossKind
    dim: int
    features: list[np.ndarray]  # per client, shape (n_i, p)
    labels: list[np.ndarray]  # per client, shape (n_i,)
    smoothness: float = 0.0  # cached L estimate; computed here when left unset
    ground_truth: np.ndarray | None = None  # planted model, when labels came from one

    def __post_init__(self) -> None:
        if len(self.features) != len(self.labels) or not self.features:
            raise ValueError("need one nonempty (features, labels) shard per client")
        for a, b in zip(self.features, self.labels):
            if a.shape[0] == 0:
                raise ValueError("every shard must be nonempty")
            if a.shape != (b.shape[0], self.dim):
                raise ValueError("feature rows must have length dim and match labels")
        if self.smoothness == 0.0:
            self.smoothness = estimate_smoothness(self)

    @property
    def n_clients(self) -> int:
        return len(self.features)


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def _per_sample_losses(loss: LossKind, a: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    z = a @ x
    if loss.variant == SQUARED_ERROR:
        return 0.5 * (z - y) ** 2
    if loss.variant == LOGISTIC:
        return np.logaddexp(0.0, -y * z)
    if loss.variant == SIGMOID_NONCONVEX:
        return _sigmoid(-y * z)
    raise ValueError(loss.variant)


def _per_sample_grad_weights(loss: LossKind, a: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-sample gradient is w_s * a_s; returns the weights w."""
    z = a @ x
    if loss.variant == SQUARED_ERROR:
        return z - y
    if loss.variant == LOGISTIC:
        return -y * _sigmoid(-y * z)
    if loss.variant == SIGMOID_NONCONVEX:
        s = _sigmoid(-y * z)
        return -y * s * (1.0 - s)
    raise ValueError(loss.variant)


def client_objective(prob: FederatedProblem, client: int, x: np.ndarray) -> float:
    if prob.loss.variant == HETERO_QUADRATIC:
        d = x - prob.loss.centers[client]
        return float(0.5 * np.sum(prob.loss.curvatures[client] * d * d))
    losses = _per_sample_losses(prob.loss, prob.features[client], prob.labels[client], x)
    return float(np.mean(losses))


def client_gradient(prob: FederatedProblem, client: int, x: np.ndarray) -> np.ndarray:
    """Exact gradient of f_i at x."""
    if prob.loss.variant == HETERO_QUADRATIC:
        return prob.loss.curvatures[client] * (x - prob.loss.centers[client])
    a = prob.features[client]
    w = _per_sample_grad_weights(prob.loss, a, prob.labels[client], x)
    return (a.T @ w) / a.shape[0]


def per_sample_gradients(prob: FederatedProblem, client: int, x: np.ndarray) -> np.ndarray:
    """All single-sample gradients of client i at x, as an (n_i, p) matrix."""
    if prob.loss.variant == HETERO_QUADRATIC:
        return client_gradient(prob, client, x)[None, :]
    a = prob.features[client]
    w = _per_sample_grad_weights(prob.loss, a, prob.labels[client], x)
    return a * w[:, None]


def stochastic_gradient(
    prob: FederatedProblem, client: int, x: np.ndarray, B: int | str, rng: RngStream | None
) -> np.ndarray:
    """Mini-batch gradient estimate, B i.i.d. samples drawn with replacement.

    B = FULL returns the exact gradient. hetero_quadratic is deterministic,
    so any B returns the exact gradient there too.
    """
    if not 0 <= client < prob.n_clients:
        raise ValueError(f"client index {client} out of range")
    if prob.loss.variant == HETERO_QUADRATIC or B == FULL:
        return client_gradient(prob, client, x)
    if not isinstance(B, int) or B < 1:
        raise ValueError("batch size must be a positive integer or FULL")
    if rng is None:
        raise ValueError("mini-batch sampling requires an rng stream")
    a = prob.features[client]
    idx = rng.gen.integers(0, a.shape[0], size=B)
    rows = a[idx]
    w = _per_sample_grad_weights(prob.loss, rows, prob.labels[client][idx], x)
    return (rows.T @ w) / B


def full_global_gradient(prob: FederatedProblem, x: np.ndarray) -> np.ndarray:
    """(1/N) sum_i grad f_i(x), accumulated in ascending client order."""
    total = np.zeros(prob.dim)
    for i in range(prob.n_clients):
        total += client_gradient(prob, i, x)
    return ensure_finite(total / prob.n_clients, "full_global_gradient")


def objective_value(prob: FederatedProblem, reg, x: np.ndarray) -> float:
    total = 0.0
    for i in range(prob.n_clients):
        total += client_objective(prob, i, x)
    return total / prob.n_clients + reg.evaluate(x)


def _power_iteration_sq_norm(a: np.ndarray) -> float:
    """lambda_max(a^T a) / n via power iteration on the p x p Gram operator."""
    n, p = a.shape
    v = np.linspace(1.0, 2.0, p)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(_POWER_ITER_MAX):
        w = a.T @ (a @ v) / n
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / nw
        if lam_new > 0 and abs(lam_new - lam) < _POWER_ITER_RTOL * lam_new:
            return lam_new
        lam = lam_new
    warnings.warn("power iteration hit the iteration cap; using last estimate")
    return lam


def estimate_smoothness(prob: FederatedProblem) -> float:
    """Upper bound L such that every f_i is L-smooth; max over clients."""
    if prob.loss.variant == HETERO_QUADRATIC:
        return float(np.max(prob.loss.curvatures))
    factor = _CURVATURE_FACTOR[prob.loss.variant]
    return factor * max(_power_iteration_sq_norm(a) for a in prob.features)


def _largest_remainder_counts(props: np.ndarray, n: int) -> np.ndarray:
    raw = props * n
    counts = np.floor(raw).astype(int)
    short = n - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(labels: np.ndarray, N: int, alpha_d: float, rng: RngStream) -> np.ndarray:
    """Per-sample shard index: class proportions drawn Dir(alpha_d) per class,
    rounded by largest remainder. Resamples until every client is nonempty
    (up to 100 tries)."""
    if N < 1:
        raise ValueError("need at least one client")
    if not alpha_d > 0:
        raise ValueError("dirichlet concentration must be positive")
    labels = np.asarray(labels)
    classes = np.unique(labels)
    assign = np.empty(labels.shape[0], dtype=np.int64)
    for _ in range(100):
        for cls in classes:
            idx = np.flatnonzero(labels == cls)
            props = rng.gen.dirichlet(np.full(N, alpha_d))
            counts = _largest_remainder_counts(props, idx.size)
            shuffled = rng.gen.permutation(idx)
            start = 0
            for client, cnt in enumerate(counts):
                assign[shuffled[start : start + cnt]] = client
                start += cnt
        if np.all(np.bincount(assign, minlength=N) > 0):
            return assign
    raise PartitionError(f"dirichlet partition left a client empty after 100 tries (N={N})")


def _iid_partition(n: int, N: int, rng: RngStream) -> np.ndarray:
    perm = rng.gen.permutation(n)
    assign = np.empty(n, dtype=np.int64)
    for client in range(N):
        assign[perm[client::N]] = client
    return assign


def generate_synthetic(
    variant: str,
    p: int,
    samples: int,
    N: int,
    part: PartitionSpec,
    rng: RngStream,
    label_noise: float = 0.1,
    curvature_range: tuple[float, float] = (0.1, 10.0),
    center_scale: float = 10.0,
) -> FederatedProblem:
    """Build a desk-scale problem instance.

    Features are standard normal. Classification labels come from a planted
    sparse model (support size max(1, p//5)); squared-error labels are pure
    noise. hetero_quadratic ignores `samples` and draws per-client diagonal
    curvatures log-uniform over curvature_range and centers uniform in
    [-center_scale, center_scale].
    """
    if p < 1:
        raise ValueError("dimension must be >= 1")
    if N < 1:
        raise ValueError("need at least one client")

    if variant == HETERO_QUADRATIC:
        lo, hi = curvature_range
        if not 0 < lo <= hi:
            raise ValueError("curvature range must be positive")
        hstream = rng.child("hetero")
        H = np.exp(hstream.gen.uniform(math.log(lo), math.log(hi), size=(N, p)))
        m = hstream.gen.uniform(-center_scale, center_scale, size=(N, p))
        loss = LossKind(HETERO_QUADRATIC, curvatures=H, centers=m)
        # Placeholder one-row shards keep the shard interface uniform; the
        # gradient oracle never reads them for this variant.
        feats = [np.zeros((1, p)) for _ in range(N)]
        labs = [np.zeros(1) for _ in range(N)]
        return FederatedProblem(loss, p, feats, labs)

    if samples < N:
        raise ValueError("need at least one sample per client")
    a = rng.child("features").gen.standard_normal((samples, p))
    x_true = None
    if variant == SQUARED_ERROR:
        y = rng.child("labels").gen.standard_normal(samples)
        classes = np.where(y >= 0, 1.0, -1.0)  # partition key for continuous labels
    elif variant in (LOGISTIC, SIGMOID_NONCONVEX):
        mstream = rng.child("model")
        support = np.sort(mstream.gen.choice(p, size=max(1, p // 5), replace=False))
        x_true = np.zeros(p)
        x_true[support] = mstream.gen.uniform(1.0, 2.0, size=support.size) * mstream.gen.choice(
            [-1.0, 1.0], size=support.size
        )
        margins = a @ x_true + label_noise * rng.child("labels").gen.standard_normal(samples)
        y = np.where(margins >= 0, 1.0, -1.0)
        classes = y
    else:
        raise ValueError(f"unknown loss variant {variant!r}")

    if part.mode == DIRICHLET:
        assign = dirichlet_partition(classes, N, part.alpha_d, rng.child("partition"))
    else:
        assign = _iid_partition(samples, N, rng.child("partition"))

    feats = [a[assign == i] for i in range(N)]
    labs = [y[assign == i] for i in range(N)]
    return FederatedProblem(LossKind(variant), p, feats, labs, ground_truth=x_true)


def dump_dataset_csv(prob: FederatedProblem, path: str) -> None:
    """One row per sample: client index, label, p feature values."""
    if prob.loss.variant == HETERO_QUADRATIC:
        raise ValueError("hetero_quadratic has no sample data to dump")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client", "label"] + [f"f{j}" for j in range(prob.dim)])
        for i in range(prob.n_clients):
            for row, lab in zip(prob.features[i], prob.labels[i]):
                writer.writerow([i, f"{lab:.17g}"] + [f"{v:.17g}" for v in row])


def load_dataset_csv(path: str, variant: str) -> FederatedProblem:
    if variant == HETERO_QUADRATIC:
        raise ValueError("hetero_quadratic cannot be loaded from a sample dump")
    by_client: dict[int, list[tuple[float, list[float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        p = len(header) - 2
        for row in reader:
            client = int(row[0])
            by_client.setdefault(client, []).append((float(row[1]), [float(v) for v in row[2:]]))
    n = max(by_client) + 1
    feats, labs = [], []
    for i in range(n):
        rows = by_client.get(i)
        if not rows:
            raise ValueError(f"client {i} has no samples in {path}")
        labs.append(np.array([r[0] for r in rows]))
        feats.append(np.array([r[1] for r in rows]))
    return FederatedProblem(LossKind(variant), p, feats, labs)
