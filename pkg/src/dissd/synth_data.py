"""Synthetic designs, labels and machine partitioning.

Every random draw comes from a Philox (counter-based, 4x64) stream keyed by
``SeedSequence([seed, stream])``. Stream ``0`` generates the unlabeled pool
on the master and stream ``j`` (``1 <= j <= m``) generates machine ``j``'s
labeled shard, so the output never depends on how the machines are
scheduled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODELS = ("huber-linear", "median-linear", "square-linear", "logistic")
NOISES = ("mixture-normal", "cauchy", "std-normal", "none")
DEFAULT_NOISE = {
    "huber-linear": "mixture-normal",
    "median-linear": "cauchy",
    "square-linear": "std-normal",
    "logistic": "none",
}

UNLABELED_STREAM = 0


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


@dataclass(frozen=True)
class GroundTruth:
    beta_star: np.ndarray
    support: tuple[int, ...]
    sigma: np.ndarray
    omega: np.ndarray
    chol: np.ndarray

    @property
    def p(self) -> int:
        return self.beta_star.shape[0]


@dataclass(frozen=True)
class ClusterData:
    """Labeled shards, one per machine, plus the master's unlabeled rows."""

    xs: tuple[np.ndarray, ...]
    ys: tuple[np.ndarray, ...]
    unlabeled: np.ndarray
    rng_seed: int | None = None

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or not self.xs:
            raise ValueError("need one (X, y) pair per machine")
        sizes = {x.shape[0] for x in self.xs}
        if len(sizes) != 1:
            raise ValueError(f"shards must have equal size, got {sorted(sizes)}")
        for x, y in zip(self.xs, self.ys):
            if y.shape != (x.shape[0],):
                raise ValueError("label vector does not match shard rows")

    @property
    def m(self) -> int:
        return len(self.xs)

    @property
    def n(self) -> int:
        return self.xs[0].shape[0]

    @property
    def p(self) -> int:
        return self.xs[0].shape[1]

    @property
    def n_star(self) -> int:
        return self.n + self.unlabeled.shape[0]

    def master_covariates(self) -> np.ndarray:
        """All covariate rows on machine 1: labeled then unlabeled."""
        return np.vstack([self.xs[0], self.unlabeled])

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        return np.vstack(self.xs), np.concatenate(self.ys)


def true_beta(p: int, s: int) -> np.ndarray:
    """``(1, (s-1)/s, ..., 1/s, 0, ..., 0)`` of length ``p``."""
    if not 1 <= s <= p:
        raise ValueError(f"need 1 <= s <= p, got s={s}, p={p}")
    beta = np.zeros(p)
    beta[:s] = (s - np.arange(s)) / s
    return beta


def block_design(p: int, block: int = 5, offdiag: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Block-diagonal precision ``(1-a) I + a J`` per block and its inverse.

    Returns ``(sigma, omega)``. The block inverse is closed form:
    ``((1-a) I + a J)^{-1} = (I - a/(1 - a + b a) J) / (1 - a)`` with
    ``b`` the block size.
    """
    if block < 1 or p % block:
        raise ValueError(f"block size {block} does not divide p={p}")
    if block > 1 and not (-1.0 / (block - 1) < offdiag < 1.0):
        raise ValueError(f"offdiag={offdiag} gives a non positive-definite block")
    if block == 1 and offdiag != 0:
        # a 1x1 block has no off-diagonal; keep the argument honest
        raise ValueError("offdiag must be 0 for block size 1")
    a = offdiag
    eye, ones = np.eye(block), np.ones((block, block))
    prec_block = (1 - a) * eye + a * ones
    cov_block = (eye - a / (1 - a + block * a) * ones) / (1 - a)
    k = p // block
    omega = np.kron(np.eye(k), prec_block)
    sigma = np.kron(np.eye(k), cov_block)
    return sigma, omega


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(sigma + 1e-12 * np.eye(sigma.shape[0]))


def make_ground_truth(p: int, s: int, block: int = 5, offdiag: float = 0.5) -> GroundTruth:
    beta = true_beta(p, s)
    sigma, omega = block_design(p, block, offdiag)
    return GroundTruth(beta, tuple(range(s)), sigma, omega, _cholesky(sigma))


def sample_noise(rng: np.random.Generator, noise: str, size: int) -> np.ndarray:
    if noise == "std-normal":
        return rng.standard_normal(size)
    if noise == "mixture-normal":
        # 0.9 N(0, 1) + 0.1 N(0, 100)
        wide = rng.random(size) < 0.1
        z = rng.standard_normal(size)
        return np.where(wide, 10.0 * z, z)
    if noise == "cauchy":
        u = rng.random(size)
        return np.tan(np.pi * (u - 0.5))
    raise ValueError(f"unknown noise {noise!r}; valid: {NOISES}")


def _labels(rng, model, noise, eta):
    if model == "logistic":
        prob = np.exp(-np.logaddexp(0.0, -eta))
        return (rng.random(eta.shape[0]) < prob).astype(float)
    return eta + sample_noise(rng, noise, eta.shape[0])


def sample_cluster(
    gt: GroundTruth,
    model: str,
    m: int,
    n: int,
    n_star: int,
    noise: str | None = None,
    seed: int = 0,
) -> ClusterData:
    """Draw ``m`` labeled shards of size ``n`` and ``n_star - n`` unlabeled rows."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; valid: {MODELS}")
    noise = DEFAULT_NOISE[model] if noise is None else noise
    if noise not in NOISES:
        raise ValueError(f"unknown noise {noise!r}; valid: {NOISES}")
    if (model == "logistic") != (noise == "none"):
        raise ValueError(f"model {model!r} cannot be paired with noise {noise!r}")
    if m < 1 or n < 1 or n_star < n:
        raise ValueError(f"need m >= 1 and n_star >= n >= 1, got m={m}, n={n}, n_star={n_star}")

    p = gt.p
    xs, ys = [], []
    for j in range(1, m + 1):
        rng = rng_stream(seed, j)
        x = rng.standard_normal((n, p)) @ gt.chol.T
        xs.append(x)
        ys.append(_labels(rng, model, noise, x @ gt.beta_star))
    rng = rng_stream(seed, UNLABELED_STREAM)
    unlabeled = rng.standard_normal((n_star - n, p)) @ gt.chol.T
    return ClusterData(tuple(xs), tuple(ys), unlabeled, seed)


def read_labeled_csv(path, m: int) -> tuple[ClusterData, list[str]]:
    """Load a headered CSV whose final column is the label.

    Rows whose label is the literal ``NA`` join the master's unlabeled
    pool. Labeled rows are dealt to ``m`` machines in file order; a
    remainder that does not fill every machine evenly is also moved to the
    unlabeled pool, since only its covariates can be used without breaking
    equal shard sizes.
    """
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 2:
            raise ValueError("CSV needs at least one feature column and a label column")
        labeled, unlabeled, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            feats = [float(v) for v in row[:-1]]
            if row[-1].strip() == "NA":
                unlabeled.append(feats)
            else:
                labeled.append(feats)
                labels.append(float(row[-1]))
    if len(labeled) < m:
        raise ValueError(f"{len(labeled)} labeled rows cannot fill {m} machines")
    n = len(labeled) // m
    x = np.asarray(labeled)
    y = np.asarray(labels)
    xs = tuple(x[j * n:(j + 1) * n] for j in range(m))
    ys = tuple(y[j * n:(j + 1) * n] for j in range(m))
    extra = x[m * n:]
    p = x.shape[1]
    pool = np.vstack([np.asarray(unlabeled).reshape(-1, p), extra])
    return ClusterData(xs, ys, pool), header[:-1]
