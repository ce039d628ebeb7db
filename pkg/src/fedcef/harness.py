"""Configuration, experiment orchestration, and CSV emission.

Config files are INI-style key/value documents with six sections::

    [problem]                      [hyper]
    loss = logistic                preset = cifar-like   ; or mnist-like
    p = 20                         alpha = 0.06
    samples = 500                  eta_g = 1.0
    clients = 10                   K = 30
    partition = dirichlet          eta = 0.1
    alpha_d = 0.6                  B = 64        ; integer or "full"
                                   T = 400
    [algorithm]
    name = fedcef                  [regularizer]
                                   kind = l1
    [compressor]                   lambda = 1e-5
    kind = topk
    retain = 0.1                   [run]
                                   seed = 0
                                   lyapunov = false
                                   transcripts = false

Every key is optional (defaults below); unknown sections or keys are hard
errors. `retain` is a ratio when written with a decimal point and a count
when written as an integer.

The output CSV carries `#`-prefixed header lines (a config echo sufficient
to re-run the experiment, the estimated smoothness constant, and the
step-condition report), one column-name line, then one row per measurement.
Floats are serialized with 17 significant digits so rows round-trip
losslessly.
"""

from __future__ import annotations

import configparser
import io
import logging
from dataclasses import dataclass

import numpy as np

from .algorithms import HyperParams, run_centralized_pgd, run_fedcef, run_prox_fedavg
from .compressors import CompressorSpec
from .core import derive_stream
from .metrics import MetricsRow, MetricsSeries, check_step_conditions, prox_gradient_mapping
from .problems import (
    DIRICHLET,
    FULL,
    IID,
    LOSS_VARIANTS,
    PartitionSpec,
    generate_synthetic,
    objective_value,
)
from .regularizers import Regularizer

logger = logging.getLogger(__name__)

SCHEMA_LINE = "# fedcef-metrics schema=1"
CSV_COLUMNS = "t,F,prox_grad_sq,uplink_bytes_cum,downlink_bytes_cum,nnz,lyapunov,condition_ok"

ALGORITHMS = ("fedcef", "prox_fedavg", "pgd")

HYPER_PRESETS = {
    # T=400, K=30, B=64, alpha=0.06, eta_g=1.0 mirror the larger benchmark
    # setting; T=65, K=10, alpha=0.1 the smaller one.
    "cifar-like": {"alpha": 0.06, "eta_g": 1.0, "K": 30, "eta": 0.1, "B": 64, "T": 400},
    "mnist-like": {"alpha": 0.1, "eta_g": 1.0, "K": 10, "eta": 0.1, "B": 64, "T": 65},
}


class ConfigError(ValueError):
    """Malformed or out-of-domain run configuration."""


@dataclass
class RunConfig:
    loss: str = "logistic"
    p: int = 20
    samples: int = 500
    clients: int = 10
    partition: str = DIRICHLET
    alpha_d: float = 0.6
    algorithm: str = "fedcef"
    alpha: float = 0.06
    eta_g: float = 1.0
    K: int = 30
    eta: float = 0.1
    B: int | str = 64
    T: int = 400
    reg_kind: str = "l1"
    reg_lambda: float = 1e-5
    comp_kind: str = "topk"
    comp_retain: int | float | None = 0.1
    seed: int = 0
    lyapunov: bool = False
    transcripts: bool = False

    def hyper(self) -> HyperParams:
        return HyperParams(alpha=self.alpha, eta_g=self.eta_g, K=self.K, eta=self.eta, B=self.B, T=self.T)

    def regularizer(self) -> Regularizer:
        return Regularizer(self.reg_kind, self.reg_lambda)

    def compressor(self) -> CompressorSpec:
        if self.comp_kind == "identity":
            return CompressorSpec("identity")
        return CompressorSpec(self.comp_kind, self.comp_retain)

    def partition_spec(self) -> PartitionSpec:
        return PartitionSpec(self.partition, self.alpha_d)

    def echo(self) -> dict[str, str]:
        """Flat section.key = value view, sufficient to re-run identically."""
        out = {
            "problem.loss": self.loss,
            "problem.p": str(self.p),
            "problem.samples": str(self.samples),
            "problem.clients": str(self.clients),
            "problem.partition": self.partition,
            "problem.alpha_d": _fmt(self.alpha_d),
            "algorithm.name": self.algorithm,
            "hyper.alpha": _fmt(self.alpha),
            "hyper.eta_g": _fmt(self.eta_g),
            "hyper.K": str(self.K),
            "hyper.eta": _fmt(self.eta),
            "hyper.B": str(self.B),
            "hyper.T": str(self.T),
            "regularizer.kind": self.reg_kind,
            "regularizer.lambda": _fmt(self.reg_lambda),
            "compressor.kind": self.comp_kind,
            "run.seed": str(self.seed),
            "run.lyapunov": str(self.lyapunov).lower(),
            "run.transcripts": str(self.transcripts).lower(),
        }
        if self.comp_retain is not None:
            out["compressor.retain"] = str(self.comp_retain)
        return out


def _fmt(x: float) -> str:
    return f"{x:.17g}"


_KNOWN_KEYS = {
    "problem": {"loss", "p", "samples", "clients", "partition", "alpha_d"},
    "algorithm": {"name"},
    "hyper": {"preset", "alpha", "eta_g", "K", "eta", "B", "T"},
    "regularizer": {"kind", "lambda"},
    "compressor": {"kind", "retain"},
    "run": {"seed", "lyapunov", "transcripts"},
}


def _parse_int(section: str, key: str, raw: str, minimum: int | None = None) -> int:
    try:
        val = int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r}: expected an integer") from None
    if minimum is not None and val < minimum:
        raise ConfigError(f"[{section}] {key} = {raw!r}: must be >= {minimum}")
    return val


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        val = float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r}: expected a number") from None
    if not np.isfinite(val):
        raise ConfigError(f"[{section}] {key} = {raw!r}: must be finite")
    return val


def _parse_bool(section: str, key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key} = {raw!r}: expected a boolean")


def _parse_retain(raw: str) -> int | float:
    raw = raw.strip()
    if any(ch in raw for ch in ".eE"):
        val = _parse_float("compressor", "retain", raw)
        if not 0.0 < val <= 1.0:
            raise ConfigError(f"[compressor] retain = {raw!r}: ratio must lie in (0, 1]")
        return val
    return _parse_int("compressor", "retain", raw, minimum=1)


def read_sections(text: str) -> dict[str, dict[str, str]]:
    """First parse stage: raw section/key strings, with unknown keys rejected."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        sections[section] = {}
        for key, value in parser.items(section):
            canonical = _canonical_key(section, key)
            if canonical is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            sections[section][canonical] = value
    return sections


def _canonical_key(section: str, key: str) -> str | None:
    # configparser lowercases keys; K/B/T are declared uppercase
    for known in _KNOWN_KEYS[section]:
        if known.lower() == key.lower():
            return known
    return None


def resolve_config(sections: dict[str, dict[str, str]]) -> RunConfig:
    """Second parse stage: validate domains and apply defaults/presets."""
    cfg = RunConfig()
    prob = sections.get("problem", {})
    if "loss" in prob:
        if prob["loss"] not in LOSS_VARIANTS:
            raise ConfigError(f"[problem] loss = {prob['loss']!r}: unknown variant")
        cfg.loss = prob["loss"]
    if "p" in prob:
        cfg.p = _parse_int("problem", "p", prob["p"], minimum=1)
    if "samples" in prob:
        cfg.samples = _parse_int("problem", "samples", prob["samples"], minimum=1)
    if "clients" in prob:
        cfg.clients = _parse_int("problem", "clients", prob["clients"], minimum=1)
    if "partition" in prob:
        if prob["partition"] not in (IID, DIRICHLET):
            raise ConfigError(f"[problem] partition = {prob['partition']!r}: unknown mode")
        cfg.partition = prob["partition"]
    if "alpha_d" in prob:
        cfg.alpha_d = _parse_float("problem", "alpha_d", prob["alpha_d"])
        if not cfg.alpha_d > 0:
            raise ConfigError("[problem] alpha_d must be positive")

    alg = sections.get("algorithm", {})
    if "name" in alg:
        if alg["name"] not in ALGORITHMS:
            raise ConfigError(f"[algorithm] name = {alg['name']!r}: unknown algorithm")
        cfg.algorithm = alg["name"]

    hyper = dict(sections.get("hyper", {}))
    preset = hyper.pop("preset", None)
    if preset is not None:
        if preset not in HYPER_PRESETS:
            raise ConfigError(f"[hyper] preset = {preset!r}: unknown preset")
        for key, value in HYPER_PRESETS[preset].items():
            setattr(cfg, key, value)
    if "alpha" in hyper:
        cfg.alpha = _parse_float("hyper", "alpha", hyper["alpha"])
        if not cfg.alpha > 0:
            raise ConfigError("[hyper] alpha must be positive")
    if "eta_g" in hyper:
        cfg.eta_g = _parse_float("hyper", "eta_g", hyper["eta_g"])
        if not cfg.eta_g > 0:
            raise ConfigError("[hyper] eta_g must be positive")
    if "K" in hyper:
        cfg.K = _parse_int("hyper", "K", hyper["K"], minimum=1)
    if "eta" in hyper:
        cfg.eta = _parse_float("hyper", "eta", hyper["eta"])
        if not 0.0 < cfg.eta <= 1.0:
            raise ConfigError("[hyper] eta must lie in (0, 1]")
    if "B" in hyper:
        raw = hyper["B"].strip().lower()
        cfg.B = FULL if raw == FULL else _parse_int("hyper", "B", hyper["B"], minimum=1)
    if "T" in hyper:
        cfg.T = _parse_int("hyper", "T", hyper["T"], minimum=1)

    reg = sections.get("regularizer", {})
    if "kind" in reg:
        if reg["kind"] not in ("zero", "l1"):
            raise ConfigError(f"[regularizer] kind = {reg['kind']!r}: unknown kind")
        cfg.reg_kind = reg["kind"]
    if "lambda" in reg:
        cfg.reg_lambda = _parse_float("regularizer", "lambda", reg["lambda"])
        if cfg.reg_lambda < 0:
            raise ConfigError("[regularizer] lambda must be nonnegative")

    comp = sections.get("compressor", {})
    if "kind" in comp:
        if comp["kind"] not in ("identity", "topk", "randk"):
            raise ConfigError(f"[compressor] kind = {comp['kind']!r}: unknown kind")
        cfg.comp_kind = comp["kind"]
    if "retain" in comp:
        cfg.comp_retain = _parse_retain(comp["retain"])
    if cfg.comp_kind == "identity":
        cfg.comp_retain = None

    run = sections.get("run", {})
    if "seed" in run:
        cfg.seed = _parse_int("run", "seed", run["seed"])
    if "lyapunov" in run:
        cfg.lyapunov = _parse_bool("run", "lyapunov", run["lyapunov"])
    if "transcripts" in run:
        cfg.transcripts = _parse_bool("run", "transcripts", run["transcripts"])

    if cfg.samples < cfg.clients and cfg.loss != "hetero_quadratic":
        raise ConfigError("[problem] samples must be >= clients")
    cfg.compressor()  # re-validates retain against the kind
    cfg.hyper()
    return cfg


def parse_config(text: str) -> RunConfig:
    return resolve_config(read_sections(text))


def build_problem(cfg: RunConfig):
    rng = derive_stream(cfg.seed, "problem")
    return generate_synthetic(
        cfg.loss, cfg.p, cfg.samples, cfg.clients, cfg.partition_spec(), rng
    )


def run_experiment(cfg: RunConfig, out_path: str) -> MetricsSeries:
    """Build the problem, run the configured algorithm, write the CSV."""
    prob = build_problem(cfg)
    reg = cfg.regularizer()
    hp = cfg.hyper()
    if cfg.algorithm == "fedcef":
        result = run_fedcef(
            prob,
            reg,
            hp,
            cfg.compressor(),
            cfg.seed,
            record_transcripts=cfg.transcripts,
            lyapunov=cfg.lyapunov,
        )
        series = result.series
    elif cfg.algorithm == "prox_fedavg":
        series = run_prox_fedavg(prob, reg, hp, cfg.seed).series
    else:  # pgd
        logger.info("algorithm=pgd has no uplink; the compressor section is ignored")
        series = _pgd_series(prob, reg, hp, cfg.seed)
    write_metrics_csv(out_path, series, cfg.echo())
    return series


def _pgd_series(prob, reg, hp: HyperParams, seed: int) -> MetricsSeries:
    traj = run_centralized_pgd(prob, reg, hp.beta, hp.T)
    report = check_step_conditions(hp, prob.smoothness, 0.0)
    rows = []
    for t, z in enumerate(traj):
        G = prox_gradient_mapping(prob, reg, z, hp.beta)
        rows.append(
            MetricsRow(
                t=t,
                F=objective_value(prob, reg, z),
                prox_grad_sq=float(np.sum(G * G)),
                uplink_bytes_cum=0,
                downlink_bytes_cum=0,
                nnz=int(np.count_nonzero(z)),
                lyapunov=None,
                condition_ok=report.all_ok,
            )
        )
    return MetricsSeries("pgd", seed, prob.smoothness, 0.0, hp.beta, report, rows)


def write_metrics_csv(path: str, series: MetricsSeries, cfg_echo: dict[str, str]) -> None:
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    for key, value in cfg_echo.items():
        buf.write(f"# cfg {key} = {value}\n")
    buf.write(f"# smoothness = {_fmt(series.smoothness)}\n")
    buf.write(f"# contraction_q2 = {_fmt(series.contraction)}\n")
    buf.write(f"# beta = {_fmt(series.beta)}\n")
    rep = series.conditions
    if rep is not None:
        buf.write(
            "# conditions: "
            f"beta_ok={int(rep.beta_ok)} beta_bound={_fmt(rep.beta_bound)} "
            f"eta_g_ok={int(rep.eta_g_ok)} eta_g_bound={_fmt(rep.eta_g_bound)} "
            f"alpha_ok={int(rep.alpha_ok)} alpha_bound={_fmt(rep.alpha_bound)}\n"
        )
    buf.write(CSV_COLUMNS + "\n")
    for row in series.rows:
        lyap = "" if row.lyapunov is None else _fmt(row.lyapunov)
        buf.write(
            f"{row.t},{_fmt(row.F)},{_fmt(row.prox_grad_sq)},{row.uplink_bytes_cum},"
            f"{row.downlink_bytes_cum},{row.nnz},{lyap},{int(row.condition_ok)}\n"
        )
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_metrics_csv(path: str) -> tuple[dict[str, str], list[MetricsRow]]:
    """Parse a CSV produced by write_metrics_csv; round-trips losslessly."""
    meta: dict[str, str] = {}
    rows: list[MetricsRow] = []
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != SCHEMA_LINE:
            raise ConfigError(f"{path}: unrecognized schema line {first!r}")
        header_seen = False
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("cfg "):
                    key, _, value = body[4:].partition(" = ")
                    meta[key.strip()] = value.strip()
                else:
                    key, _, value = body.partition(" = ")
                    meta[key.strip()] = value.strip()
                continue
            if not header_seen:
                if line != CSV_COLUMNS:
                    raise ConfigError(f"{path}: unexpected column header {line!r}")
                header_seen = True
                continue
            if not line:
                continue
            parts = line.split(",")
            rows.append(
                MetricsRow(
                    t=int(parts[0]),
                    F=float(parts[1]),
                    prox_grad_sq=float(parts[2]),
                    uplink_bytes_cum=int(parts[3]),
                    downlink_bytes_cum=int(parts[4]),
                    nnz=int(parts[5]),
                    lyapunov=None if parts[6] == "" else float(parts[6]),
                    condition_ok=parts[7] == "1",
                )
            )
    if not header_seen:
        raise ConfigError(f"{path}: missing column header")
    return meta, rows


@dataclass
class RunSummary:
    path: str
    final_objective: float
    final_prox_grad_sq: float
    total_bytes: int
    uplink_bytes: int
    bytes_to_threshold: int | None  # None = threshold never reached


@dataclass
class ComparisonSummary:
    a: RunSummary
    b: RunSummary
    threshold: float | None
    aligned: list[tuple[int, int, float, float, int, float, float]]
    # rows of (t, bytes_a, F_a, pg_a, bytes_b, F_b, pg_b) at shared rounds

    @property
    def uplink_savings_pct(self) -> float:
        """Relative uplink saving of run a against run b at the final round."""
        if self.b.uplink_bytes == 0:
            return 0.0
        return 100.0 * (self.b.uplink_bytes - self.a.uplink_bytes) / self.b.uplink_bytes

    def render(self) -> str:
        lines = [
            f"run A: {self.a.path}",
            f"run B: {self.b.path}",
            f"final objective: A={_fmt(self.a.final_objective)} B={_fmt(self.b.final_objective)}",
            f"final ||G||^2:   A={_fmt(self.a.final_prox_grad_sq)} B={_fmt(self.b.final_prox_grad_sq)}",
            f"total bytes:     A={self.a.total_bytes} B={self.b.total_bytes}",
            f"uplink bytes:    A={self.a.uplink_bytes} B={self.b.uplink_bytes}"
            f" (A saves {self.uplink_savings_pct:.1f}% vs B)",
        ]
        if self.threshold is not None:
            for name, s in (("A", self.a), ("B", self.b)):
                reach = "not reached" if s.bytes_to_threshold is None else str(s.bytes_to_threshold)
                lines.append(f"bytes to F <= {_fmt(self.threshold)} ({name}): {reach}")
        return "\n".join(lines)


def _summarize(path: str, rows: list[MetricsRow], threshold: float | None) -> RunSummary:
    last = rows[-1]
    reach = None
    if threshold is not None:
        for row in rows:
            if row.F <= threshold:
                reach = row.uplink_bytes_cum + row.downlink_bytes_cum
                break
    return RunSummary(
        path=path,
        final_objective=last.F,
        final_prox_grad_sq=last.prox_grad_sq,
        total_bytes=last.uplink_bytes_cum + last.downlink_bytes_cum,
        uplink_bytes=last.uplink_bytes_cum,
        bytes_to_threshold=reach,
    )


def compare_runs(path_a: str, path_b: str, threshold: float | None = None) -> ComparisonSummary:
    _, rows_a = read_metrics_csv(path_a)
    _, rows_b = read_metrics_csv(path_b)
    aligned = []
    for ra, rb in zip(rows_a, rows_b):
        aligned.append(
            (
                ra.t,
                ra.uplink_bytes_cum + ra.downlink_bytes_cum,
                ra.F,
                ra.prox_grad_sq,
                rb.uplink_bytes_cum + rb.downlink_bytes_cum,
                rb.F,
                rb.prox_grad_sq,
            )
        )
    return ComparisonSummary(
        a=_summarize(path_a, rows_a, threshold),
        b=_summarize(path_b, rows_b, threshold),
        threshold=threshold,
        aligned=aligned,
    )
