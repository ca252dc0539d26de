"""Monte Carlo experiment runner: configs, presets, metrics and CSV output.

A config is a flat ``key = value`` text file. Every key is a field of
:class:`ExperimentConfig`; command-line flags override keys with the same
name in kebab case (``--n-star 550``). Optional keys take ``auto`` for
the built-in default.
"""

from __future__ import annotations

import csv
import io
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from dissd.baselines import csl_iter, csl_lambda, local_lasso, oneshot_avg_debias, pooled_lasso
from dissd.cluster_sim import Cluster, Machine
from dissd.dissd_glm import run_dissd_glm
from dissd.dissd_mest import DissdConfig, run_dissd_mest
from dissd.model_zoo import absolute_loss, huber_loss, logistic_link, square_loss
from dissd.synth_data import MODELS, NOISES, make_ground_truth, sample_cluster

HEADER = ("rep", "method", "step", "l2_err", "l1_err", "linf_err", "f1", "time_ms", "floats_sent")
METHODS = ("dissd", "dissd-sup", "oneshot", "csl", "pooled", "local")
INITS = ("local", "random", "pgd")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "huber-linear"
    m: int = 100
    n: int = 100
    n_star: int = 550
    p: int = 500
    s: int = 10
    T: int = 5
    reps: int = 20
    seed: int = 0
    tau_scale: float | None = None
    lambda_scale: float | None = None
    lambda0_scale: float = 0.5
    bandwidth: float = 0.1
    delta: float = 1.345
    psi2_floor: float = 0.01
    noise: str | None = None
    init: str = "local"
    pgd_rounds: int = 10
    csl_lambda_scale: float = 0.5
    block: int = 5
    offdiag: float = 0.5
    methods: tuple[str, ...] = ("dissd",)
    out_path: str = "results.csv"
    threads: int = 1
    timing: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; valid: {', '.join(MODELS)}")
        bad = [k for k in self.methods if k not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown method {bad[0] if bad else '(none)'!r}; valid: {', '.join(METHODS)}")
        if self.noise is not None and self.noise not in NOISES:
            raise ConfigError(f"unknown noise {self.noise!r}; valid: {', '.join(NOISES)}")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}; valid: local, random, pgd(rounds)")
        if self.n_star < self.n:
            raise ConfigError(f"n_star={self.n_star} must be >= n={self.n}")
        if not 1 <= self.s <= self.p:
            raise ConfigError(f"need 1 <= s <= p, got s={self.s}, p={self.p}")
        if self.reps < 1 or self.m < 1 or self.n < 1 or self.T < 0:
            raise ConfigError("reps, m and n must be >= 1 and T >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def dissd_config(self, seed: int) -> DissdConfig:
        return DissdConfig(
            T=self.T, s=self.s, tau_scale=self.tau_scale, lambda_scale=self.lambda_scale,
            lambda0_scale=self.lambda0_scale, init=self.init, pgd_rounds=self.pgd_rounds,
            bandwidth=self.bandwidth, seed=seed,
        )

    def loss(self):
        if self.model == "huber-linear":
            return huber_loss(self.delta)
        if self.model == "median-linear":
            return absolute_loss()
        if self.model == "square-linear":
            return square_loss()
        return logistic_link(self.psi2_floor)


PRESETS: dict[str, dict] = {
    # m x n_star grids at n=100, p=500, s=10
    "huber-base": dict(model="huber-linear"),
    "median-base": dict(model="median-linear"),
    "logistic-base": dict(model="logistic", n_star=250),
    # p x s grids at m=100, n=100, n_star=550
    "huber-p200": dict(model="huber-linear", p=200),
    "median-p200": dict(model="median-linear", p=200),
    "logistic-p200": dict(model="logistic", p=200),
    # error paths against the supervised variant and baselines
    "huber-rounds": dict(model="huber-linear", T=10, methods=("dissd", "dissd-sup", "csl", "pooled", "local")),
    "huber-init": dict(model="huber-linear", T=10, n_star=250),
    "median-rounds": dict(model="median-linear", T=10, methods=("dissd", "dissd-sup", "pooled", "local")),
    "logistic-rounds": dict(model="logistic", T=10, methods=("dissd", "dissd-sup", "csl", "pooled", "local")),
    # small configuration for smoke runs
    "quick": dict(model="huber-linear", m=10, n=100, n_star=300, p=50, s=5, reps=2),
}

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_PGD = re.compile(r"^pgd\((\d+)\)$")


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown key {key!r}; valid: {', '.join(_FIELDS)}")
    text = raw.strip()
    kind = str(_FIELDS[key].type)
    try:
        if key == "methods":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if kind == "bool":
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        # "auto" means the built-in default; "none" is also a legal noise
        # name, so only numeric keys accept it as a synonym
        if "None" in kind and (text.lower() == "auto" or (text.lower() == "none" and not kind.startswith("str"))):
            return None
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_pairs(pairs: dict[str, str]) -> dict:
    out = {}
    for key, raw in pairs.items():
        key = key.replace("-", "_")
        if key == "init":
            match = _PGD.match(raw.strip())
            if match:
                out["init"] = "pgd"
                out["pgd_rounds"] = int(match.group(1))
                continue
        out[key] = _coerce(key, raw)
    return out


def read_config_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def build_config(path: str | None = None, preset: str | None = None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then the preset, then the file, then the overrides."""
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; valid: {', '.join(PRESETS)}")
        values.update(PRESETS[preset])
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_pairs(read_config_text(text)))
    values.update(parse_pairs(overrides or {}))
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, (tuple, list)):
            value = ",".join(value)
        elif value is None:
            value = "auto"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ metrics


def support(v: np.ndarray) -> set[int]:
    return {int(i) for i in np.flatnonzero(v)}


def f1_score(estimated, truth) -> float:
    """Harmonic mean of support precision and recall."""
    estimated, truth = set(estimated), set(truth)
    if not truth:
        raise ValueError("true support is empty")
    hits = len(estimated & truth)
    if hits == 0:
        return 0.0
    prec = hits / len(estimated)
    rec = hits / len(truth)
    return 2 * prec * rec / (prec + rec)


@dataclass(frozen=True)
class MetricsRow:
    rep: int
    method: str
    step: int
    l2_err: float
    l1_err: float
    linf_err: float
    f1: float
    time_ms: float
    floats_sent: int


def metrics_row(rep, method, step, est, beta_star, truth, seconds, floats) -> MetricsRow:
    err = np.asarray(est, dtype=float) - beta_star
    return MetricsRow(
        rep, method, step,
        float(np.linalg.norm(err)), float(np.abs(err).sum()), float(np.abs(err).max()),
        f1_score(support(est), truth), 1000.0 * seconds, int(floats),
    )


# ------------------------------------------------------------------ running


def rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


def _supervised(cluster: Cluster) -> Cluster:
    machines = tuple(Machine(mc.id, mc.x, mc.y) for mc in cluster.machines)
    return Cluster(machines, cluster.threads)


def _dissd_rows(rep, name, cluster, cfg, seed, gt, truth):
    loss = cfg.loss()
    dcfg = cfg.dissd_config(seed)
    if cfg.model == "logistic":
        run = run_dissd_glm(cluster, loss, dcfg)
    else:
        run = run_dissd_mest(cluster, loss, dcfg)
    secs = [0.0] + run.extras["round_seconds"]
    return [
        metrics_row(rep, name, st.round, st.beta_hat, gt.beta_star, truth, secs[st.round], st.floats_sent)
        for st in run.history
    ]


def _csl_rows(rep, cluster, cfg, gt, truth):
    lam = csl_lambda(cfg.p, cfg.m, cfg.n, cfg.csl_lambda_scale)
    rows = []
    start = time.perf_counter()
    for step, beta in enumerate(csl_iter(cluster, cfg.loss(), cfg.T, lam, lambda0_scale=cfg.lambda0_scale)):
        now = time.perf_counter()
        secs = 0.0 if step == 0 else now - start
        rows.append(metrics_row(rep, "csl", step, beta, gt.beta_star, truth, secs, cluster.ledger.total))
        start = time.perf_counter()
    return rows


def _single(rep, name, fit, cluster, gt, truth, floats=None):
    start = time.perf_counter()
    est = fit(cluster)
    secs = time.perf_counter() - start
    sent = cluster.ledger.total if floats is None else floats
    step = 1 if name == "oneshot" else 0
    return [metrics_row(rep, name, step, est, gt.beta_star, truth, secs, sent)]


def run_rep(cfg: ExperimentConfig, rep: int, gt=None) -> list[MetricsRow]:
    if gt is None:
        gt = make_ground_truth(cfg.p, cfg.s, cfg.block, cfg.offdiag)
    seed = rep_seed(cfg.seed, rep)
    data = sample_cluster(gt, cfg.model, cfg.m, cfg.n, cfg.n_star, cfg.noise, seed)
    truth = set(gt.support)
    loss = cfg.loss()
    rows: list[MetricsRow] = []
    for method in cfg.methods:
        cluster = Cluster.from_data(data)
        if method == "dissd":
            rows += _dissd_rows(rep, method, cluster, cfg, seed, gt, truth)
        elif method == "dissd-sup":
            rows += _dissd_rows(rep, method, _supervised(cluster), cfg, seed, gt, truth)
        elif method == "csl":
            rows += _csl_rows(rep, cluster, cfg, gt, truth)
        elif method == "oneshot":
            rows += _single(rep, method, lambda c: oneshot_avg_debias(
                c, loss, cfg.lambda0_scale, cfg.lambda_scale, bandwidth=cfg.bandwidth), cluster, gt, truth)
        elif method == "pooled":
            # shipping every remote labeled row to the master
            shipped = (cfg.m - 1) * cfg.n * (cfg.p + 1)
            rows += _single(rep, method, lambda c: pooled_lasso(c, loss, scale=cfg.lambda0_scale),
                            cluster, gt, truth, shipped)
        elif method == "local":
            rows += _single(rep, method, lambda c: local_lasso(c, loss, scale=cfg.lambda0_scale), cluster, gt, truth)
    if not cfg.timing:
        rows = [replace(r, time_ms=0.0) for r in rows]
    return rows


def run_experiment(cfg: ExperimentConfig) -> list[MetricsRow]:
    """All reps, ordered by rep then by method order in the config."""
    gt = make_ground_truth(cfg.p, cfg.s, cfg.block, cfg.offdiag)
    if cfg.threads == 1:
        per_rep = [run_rep(cfg, r, gt) for r in range(cfg.reps)]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_rep = list(pool.map(lambda r: run_rep(cfg, r, gt), range(cfg.reps)))
    return [row for rows in per_rep for row in rows]


def steps_reported(method: str, T: int) -> int:
    return T + 1 if method in ("dissd", "dissd-sup", "csl") else 1


# ------------------------------------------------------------------ output


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in rows:
        writer.writerow([_fmt(getattr(r, k)) for k in HEADER])
    return buf.getvalue()


def write_csv(rows, path) -> None:
    Path(path).write_text(rows_to_csv(rows))


def read_csv(path) -> list[MetricsRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [
            MetricsRow(int(d["rep"]), d["method"], int(d["step"]), float(d["l2_err"]), float(d["l1_err"]),
                       float(d["linf_err"]), float(d["f1"]), float(d["time_ms"]), int(d["floats_sent"]))
            for d in reader
        ]


@dataclass
class SummaryCell:
    method: str
    step: int
    reps: int
    l2_mean: float
    l2_sd: float
    l2_se: float
    f1_mean: float
    f1_sd: float
    floats_sent: float
    extra: dict = field(default_factory=dict)


def summarize(rows) -> list[SummaryCell]:
    groups: dict[tuple[str, int], list[MetricsRow]] = {}
    for r in rows:
        groups.setdefault((r.method, r.step), []).append(r)
    cells = []
    for (method, step), rs in groups.items():
        l2 = np.array([r.l2_err for r in rs])
        f1 = np.array([r.f1 for r in rs])
        sd = float(l2.std(ddof=1)) if len(rs) > 1 else math.nan
        cells.append(SummaryCell(
            method, step, len(rs), float(l2.mean()), sd, sd / math.sqrt(len(rs)),
            float(f1.mean()), float(f1.std(ddof=1)) if len(rs) > 1 else math.nan,
            float(np.mean([r.floats_sent for r in rs])),
        ))
    return cells


def format_summary(cells) -> str:
    lines = [f"{'method':<10} {'step':>4} {'reps':>4}  {'l2 mean':>9} {'sd':>8} {'se':>8}  {'f1 mean':>7} {'sd':>6}  {'floats':>10}"]
    for c in cells:
        lines.append(
            f"{c.method:<10} {c.step:>4} {c.reps:>4}  {c.l2_mean:>9.4f} {c.l2_sd:>8.4f} {c.l2_se:>8.4f}"
            f"  {c.f1_mean:>7.3f} {c.f1_sd:>6.3f}  {c.floats_sent:>10.0f}"
        )
    return "\n".join(lines)
