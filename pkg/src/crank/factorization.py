"""Implicit-feedback matrix factorization trained by alternating least squares.

Confidence-weighted binary preferences: every observed cell has preference 1
and confidence ``1 + conf_alpha * count``, every unobserved cell preference 0
and confidence 1. Each half-sweep solves the per-row normal equations exactly,
so the objective never increases.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .domain import CategoryMap, EventType, InteractionEvent

_log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400


class EmptyMatrixError(ValueError):
    pass


@dataclass
class TrainConfig:
    dim: int = 32
    iterations: int = 15
    reg: float = 0.01
    conf_alpha: float = 40.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.reg > 0:
            raise ValueError("reg must be > 0")
        if self.conf_alpha < 0:
            raise ValueError("conf_alpha must be >= 0")


@dataclass
class InteractionMatrix:
    """Sparse positive counts with row (user) and column ids."""

    row_ids: list[str]
    col_ids: list[str]
    counts: sp.csr_matrix

    def __post_init__(self) -> None:
        self.counts = sp.csr_matrix(self.counts, dtype=np.float64)
        self.counts.sort_indices()
        if self.counts.shape != (len(self.row_ids), len(self.col_ids)):
            raise ValueError(
                f"count shape {self.counts.shape} does not match "
                f"{len(self.row_ids)} rows x {len(self.col_ids)} cols"
            )
        if self.counts.nnz and self.counts.data.min() <= 0:
            raise ValueError("counts must be strictly positive")

    @classmethod
    def from_counts(cls, counts: dict[tuple[str, str], float]) -> InteractionMatrix:
        if not counts:
            raise EmptyMatrixError("no transactions in window")
        rows = sorted({r for r, _ in counts})
        cols = sorted({c for _, c in counts})
        ridx = {r: i for i, r in enumerate(rows)}
        cidx = {c: j for j, c in enumerate(cols)}
        keys = list(counts)
        data = np.array([counts[k] for k in keys], dtype=np.float64)
        ri = np.array([ridx[r] for r, _ in keys])
        ci = np.array([cidx[c] for _, c in keys])
        m = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), len(cols)))
        return cls(rows, cols, m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def to_dict(self) -> dict[tuple[str, str], float]:
        coo = self.counts.tocoo()
        return {
            (self.row_ids[i], self.col_ids[j]): float(v)
            for i, j, v in zip(coo.row, coo.col, coo.data)
        }


def build_matrix(
    events: Iterable[InteractionEvent],
    axis: Literal["item", "category"] = "item",
    catalog: CategoryMap | None = None,
    window_days: int = 365,
    now: int | None = None,
) -> InteractionMatrix:
    """Count add-to-cart transactions per (user, item) or (user, category).

    The window trails ``now`` (default: the latest event timestamp).
    """
    if axis not in ("item", "category"):
        raise ValueError(f"axis must be 'item' or 'category', got {axis!r}")
    if axis == "category" and catalog is None:
        raise ValueError("axis='category' requires a catalog")
    events = list(events)
    if now is None:
        now = max((e.ts for e in events), default=0)
    start = now - window_days * SECONDS_PER_DAY
    counts: Counter = Counter()
    for e in events:
        if e.event is not EventType.ATC or e.item is None or not (start <= e.ts <= now):
            continue
        col = e.item if axis == "item" else catalog[e.item]
        counts[(e.user, col)] += 1
    return InteractionMatrix.from_counts(dict(counts))


@dataclass
class EmbeddingTable:
    row_ids: list[str]
    col_ids: list[str]
    row_factors: np.ndarray
    col_factors: np.ndarray
    row_index: dict[str, int] = field(init=False, repr=False)
    col_index: dict[str, int] = field(init=False, repr=False)
    mean_row: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.row_factors = np.ascontiguousarray(self.row_factors, dtype=np.float64)
        self.col_factors = np.ascontiguousarray(self.col_factors, dtype=np.float64)
        if self.row_factors.ndim != 2 or self.col_factors.ndim != 2:
            raise ValueError("factor arrays must be 2-d")
        if self.row_factors.shape[1] != self.col_factors.shape[1]:
            raise ValueError("row and column factors differ in dimension")
        if self.row_factors.shape[0] != len(self.row_ids):
            raise ValueError("row id count does not match row factors")
        if self.col_factors.shape[0] != len(self.col_ids):
            raise ValueError("column id count does not match column factors")
        if not (np.isfinite(self.row_factors).all() and np.isfinite(self.col_factors).all()):
            raise ValueError("embedding contains non-finite values")
        self.row_index = {r: i for i, r in enumerate(self.row_ids)}
        self.col_index = {c: j for j, c in enumerate(self.col_ids)}
        if len(self.row_index) != len(self.row_ids) or len(self.col_index) != len(self.col_ids):
            raise ValueError("duplicate ids in embedding table")
        if len(self.row_ids):
            self.mean_row = self.row_factors.mean(axis=0)
        else:
            self.mean_row = np.zeros(self.dim)

    @property
    def dim(self) -> int:
        return self.row_factors.shape[1]

    def row_vector(self, row_id: str) -> np.ndarray:
        """Factor for ``row_id``, or the mean row factor for unseen rows."""
        i = self.row_index.get(row_id)
        return self.mean_row if i is None else self.row_factors[i]

    def save(self, path: str | Path) -> None:
        """Write the text embedding format.

        Header ``dim=<n> rows=<r> cols=<c>``, then ``r`` row-factor lines and
        ``c`` column-factor lines, each ``<id> <v1> ... <vn>`` with
        shortest round-trip float repr.
        """
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"dim={self.dim} rows={len(self.row_ids)} cols={len(self.col_ids)}\n")
            for ids, mat in ((self.row_ids, self.row_factors), (self.col_ids, self.col_factors)):
                for rid, vec in zip(ids, mat):
                    fh.write(rid + " " + " ".join(repr(float(v)) for v in vec) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> EmbeddingTable:
        with open(path, encoding="utf-8") as fh:
            header = dict(tok.split("=", 1) for tok in fh.readline().split())
            try:
                dim, n_rows = int(header["dim"]), int(header["rows"])
                n_cols = int(header.get("cols", 0))
            except (KeyError, ValueError):
                raise ValueError(f"{path}: bad embedding header {header}") from None
            ids: list[str] = []
            vecs: list[list[float]] = []
            for lineno, line in enumerate(fh, 2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
                ids.append(parts[0])
                vecs.append([float(v) for v in parts[1:]])
        if len(ids) != n_rows + n_cols:
            raise ValueError(f"{path}: header promises {n_rows + n_cols} vectors, found {len(ids)}")
        arr = np.array(vecs, dtype=np.float64).reshape(len(ids), dim)
        return cls(ids[:n_rows], ids[n_rows:], arr[:n_rows], arr[n_rows:])


def predict_affinity(t: EmbeddingTable, u: str, i: str) -> float:
    """Dot product of user and item factors; cold users use the mean user factor."""
    j = t.col_index.get(i)
    if j is None:
        raise KeyError(f"item {i} has no embedding")
    return float(t.row_vector(u) @ t.col_factors[j])


def init_factors(n_rows: int, n_cols: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    X = rng.uniform(-0.05, 0.05, size=(n_rows, cfg.dim))
    Y = rng.uniform(-0.05, 0.05, size=(n_cols, cfg.dim))
    return X, Y


def solve_half(counts: sp.csr_matrix, other: np.ndarray, reg: float, conf_alpha: float) -> np.ndarray:
    """Exact least-squares update of every row given the opposite factors.

    For row u with observed columns O: (YᵀY + Y_Oᵀ diag(α·η) Y_O + reg·I) x_u = Y_Oᵀ (1 + α·η).
    """
    n_rows = counts.shape[0]
    k = other.shape[1]
    gram = other.T @ other
    regI = reg * np.eye(k)
    out = np.empty((n_rows, k))
    indptr, indices, data = counts.indptr, counts.indices, counts.data
    for u in range(n_rows):
        cols = indices[indptr[u] : indptr[u + 1]]
        if len(cols) == 0:
            # no observations: only the all-zero preferences and reg remain
            out[u] = 0.0
            continue
        eta = data[indptr[u] : indptr[u + 1]]
        Yo = other[cols]
        A = gram + (Yo.T * (conf_alpha * eta)) @ Yo + regI
        b = Yo.T @ (1.0 + conf_alpha * eta)
        c, low = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
        out[u] = scipy.linalg.cho_solve((c, low), b, check_finite=False)
    if not np.isfinite(out).all():
        raise FloatingPointError("ALS half-sweep produced non-finite factors")
    return out


def als_objective_arrays(
    counts: sp.csr_matrix, X: np.ndarray, Y: np.ndarray, reg: float, conf_alpha: float
) -> float:
    # Σ_all (xᵀy)² via trace identity, then correct the observed cells.
    total = float(np.sum((X.T @ X) * (Y.T @ Y)))
    coo = counts.tocoo()
    s = np.einsum("ij,ij->i", X[coo.row], Y[coo.col])
    c = 1.0 + conf_alpha * coo.data
    total += float(np.sum(c * (1.0 - s) ** 2 - s**2))
    total += reg * (float(np.sum(X * X)) + float(np.sum(Y * Y)))
    return total


def als_objective(m: InteractionMatrix, t: EmbeddingTable, cfg: TrainConfig) -> float:
    """Value of the confidence-weighted squared loss plus L2 penalty."""
    if t.row_ids != m.row_ids or t.col_ids != m.col_ids:
        raise ValueError("embedding table ids do not match the interaction matrix")
    return als_objective_arrays(m.counts, t.row_factors, t.col_factors, cfg.reg, cfg.conf_alpha)


def train_als(
    m: InteractionMatrix,
    cfg: TrainConfig,
    callback=None,
) -> EmbeddingTable:
    """Fit row and column factors by ``cfg.iterations`` full ALS sweeps.

    ``callback(phase, X, Y)`` is invoked after every half-sweep with phase
    ``"init"``, ``"rows"`` or ``"cols"``; useful for monitoring the objective.
    """
    if m.counts.nnz == 0:
        raise EmptyMatrixError("cannot train on an empty matrix")
    counts = m.counts
    counts_t = counts.T.tocsr()
    counts_t.sort_indices()
    X, Y = init_factors(*m.shape, cfg)
    if callback is not None:
        callback("init", X, Y)
    for it in range(cfg.iterations):
        X = solve_half(counts, Y, cfg.reg, cfg.conf_alpha)
        if callback is not None:
            callback("rows", X, Y)
        Y = solve_half(counts_t, X, cfg.reg, cfg.conf_alpha)
        if callback is not None:
            callback("cols", X, Y)
        if _log.isEnabledFor(logging.DEBUG):
            obj = als_objective_arrays(counts, X, Y, cfg.reg, cfg.conf_alpha)
            _log.debug("iteration %d objective %.6g", it + 1, obj)
    return EmbeddingTable(list(m.row_ids), list(m.col_ids), X, Y)


def auc(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> float:
    """Probability a positive outranks a negative (ties count half)."""
    pos = np.sort(np.asarray(scores_pos, dtype=float))
    neg = np.sort(np.asarray(scores_neg, dtype=float))
    if not len(pos) or not len(neg):
        return math.nan
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    return float((below + 0.5 * ties).sum() / (len(pos) * len(neg)))
