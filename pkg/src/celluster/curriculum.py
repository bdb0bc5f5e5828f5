"""Node difficulty scoring, pruning, and the pacing schedule.

Difficulty combines two views: locally, the summed cosine similarity of a
node's embedding to its neighbors'; globally, one minus the node's share of
total entropy variation, where a node's variation is the drop in
degree-distribution entropy when it and its edges are removed. Low-variation
nodes contribute little structure and count as hard. Components are min-max
normalized before the beta-weighted combination, since their raw scales are
incommensurate.

Note the local measurer's polarity: summing similarities literally scores
homogeneous neighborhoods as *harder*. That is the formula as given and the
default; `local_mode="dissimilarity"` sums 1 - S instead for callers who
want boundary nodes scored hard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cellgraph import CellGraph, subgraph

LOCAL_MODES = ("literal", "dissimilarity")
PRUNE_STRATEGIES = ("hard", "easy", "random")


@dataclass(frozen=True)
class DifficultyReport:
    local: np.ndarray  # (n,)
    global_: np.ndarray  # (n,)
    combined: np.ndarray  # (n,) = beta * local_norm + (1 - beta) * global_norm
    order: np.ndarray  # node indices, ascending difficulty, ties to lower index
    beta: float

    @property
    def n(self) -> int:
        return self.local.shape[0]


@dataclass(frozen=True)
class PruneResult:
    kept: np.ndarray  # ascending-difficulty order
    dropped: np.ndarray
    alpha: float


@dataclass(frozen=True)
class PacingConfig:
    lambda0: float  # initial fraction in (0, 1]
    t_hat: float  # ramp length in epochs, >= 1

    def __post_init__(self):
        if not 0.0 < self.lambda0 <= 1.0:
            raise ValueError(f"lambda0 must be in (0, 1], got {self.lambda0}")
        if self.t_hat < 1:
            raise ValueError(f"t_hat must be >= 1, got {self.t_hat}")


def local_difficulty(z, graph: CellGraph, mode: str = "literal") -> np.ndarray:
    """Per node, the summed cosine similarity to its neighbors' embeddings.

    Isolated nodes score 0; zero-norm embedding rows contribute similarity 0.
    """
    if mode not in LOCAL_MODES:
        raise ValueError(f"unknown local mode {mode!r}, expected one of {LOCAL_MODES}")
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != graph.n:
        raise ValueError(f"{z.shape[0]} embedding rows for a graph of {graph.n} nodes")
    norms = np.linalg.norm(z, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = z / safe[:, None]
    unit[norms == 0] = 0.0  # zero-norm rows contribute S = 0
    sims = graph.adjacency.multiply(unit @ unit.T)
    if mode == "literal":
        return np.asarray(sims.sum(axis=1)).reshape(-1)
    dissim = np.asarray((graph.adjacency - sims).sum(axis=1)).reshape(-1)
    return dissim


def graph_entropy(graph: CellGraph) -> float:
    """Natural-log entropy of the degree distribution; edgeless graphs have
    entropy 0 and degree-0 nodes contribute 0 through 0*log(0) := 0."""
    return _degree_entropy(graph.degrees)


def _degree_entropy(degrees: np.ndarray) -> float:
    degrees = np.asarray(degrees, dtype=np.float64)
    total = degrees.sum()
    if total == 0:
        return 0.0
    p = degrees / total
    positive = p > 0
    return float(-np.sum(p[positive] * np.log(p[positive])))


def global_difficulty(graph: CellGraph) -> np.ndarray:
    """One minus each node's share of total entropy variation.

    A node's variation is Ent(G) - Ent(G without the node and its edges),
    each entropy recomputed on the actual subgraph. All-zero variation
    (e.g. an edgeless graph) maps to all-zero difficulty.
    """
    n = graph.n
    if n < 2:
        raise ValueError("global difficulty needs at least 2 nodes")
    base = graph_entropy(graph)
    adjacency = graph.adjacency
    variation = np.empty(n)
    all_nodes = np.arange(n)
    for v in range(n):
        keep = np.delete(all_nodes, v)
        sub = adjacency[keep][:, keep]
        sub_degrees = np.asarray(sub.sum(axis=1)).reshape(-1)
        variation[v] = base - _degree_entropy(sub_degrees)
    total = variation.sum()
    if total == 0:
        return np.zeros(n)
    return 1.0 - variation / total


def _min_max(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)  # constant component carries no signal
    return (values - lo) / (hi - lo)


def combine_and_rank(local, global_, beta: float) -> DifficultyReport:
    local = np.asarray(local, dtype=np.float64)
    global_ = np.asarray(global_, dtype=np.float64)
    if local.shape != global_.shape:
        raise ValueError(f"component lengths differ: {local.shape} vs {global_.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    combined = beta * _min_max(local) + (1.0 - beta) * _min_max(global_)
    order = np.argsort(combined, kind="stable")  # ties resolve to the lower index
    return DifficultyReport(
        local=local, global_=global_, combined=combined, order=order, beta=beta
    )


def measure_difficulty(
    z, graph: CellGraph, beta: float = 0.5, local_mode: str = "literal"
) -> DifficultyReport:
    return combine_and_rank(
        local_difficulty(z, graph, mode=local_mode), global_difficulty(graph), beta
    )


def prune(
    report: DifficultyReport, alpha: float, strategy: str = "hard", seed: int = 0
) -> PruneResult:
    """Drop floor(alpha * n) nodes: the hardest, the easiest, or a seeded
    uniform sample. `kept` preserves ascending-difficulty order."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if strategy not in PRUNE_STRATEGIES:
        raise ValueError(
            f"unknown prune strategy {strategy!r}, expected one of {PRUNE_STRATEGIES}"
        )
    n = report.n
    n_drop = int(np.floor(alpha * n))
    order = report.order
    if n_drop == 0:
        return PruneResult(kept=order.copy(), dropped=np.array([], dtype=order.dtype), alpha=alpha)
    if strategy == "hard":
        kept, dropped = order[:-n_drop], order[-n_drop:]
    elif strategy == "easy":
        kept, dropped = order[n_drop:], order[:n_drop]
    else:
        rng = np.random.default_rng(seed)
        positions = rng.choice(n, size=n_drop, replace=False)
        mask = np.zeros(n, dtype=bool)
        mask[positions] = True
        kept, dropped = order[~mask[order]], order[mask[order]]
    return PruneResult(kept=kept.copy(), dropped=dropped.copy(), alpha=alpha)


def pacing_fraction(t: float, cfg: PacingConfig, alpha: float) -> float:
    """min(1, 2^(log2(lambda0) * (1 - t/t_hat))), capped at 1 - alpha.

    Starts at lambda0, doubles smoothly, reaches the cap by t = t_hat, and
    never decreases.
    """
    if t < 0:
        raise ValueError(f"epoch must be >= 0, got {t}")
    exponent = np.log2(cfg.lambda0) * (1.0 - t / cfg.t_hat)
    fraction = min(1.0, 2.0**exponent)
    return min(fraction, 1.0 - alpha)


def rebuild_after_prune(graph: CellGraph, result: PruneResult) -> tuple[CellGraph, np.ndarray]:
    """Subgraph over kept nodes (original index order) plus the kept index map."""
    kept_sorted = np.sort(result.kept)
    return subgraph(graph, kept_sorted), kept_sorted


def write_difficulty_csv(path, report: DifficultyReport, result: PruneResult | None = None) -> None:
    """CSV rows: node_id,local,global,combined,rank,dropped (rank 0 = easiest)."""
    rank = np.empty(report.n, dtype=np.int64)
    rank[report.order] = np.arange(report.n)
    dropped = np.zeros(report.n, dtype=bool)
    if result is not None:
        dropped[result.dropped] = True
    with open(path, "w") as fh:
        fh.write("node_id,local,global,combined,rank,dropped\n")
        for v in range(report.n):
            fh.write(
                f"{v},{float(report.local[v])!r},{float(report.global_[v])!r},"
                f"{float(report.combined[v])!r},{rank[v]},{int(dropped[v])}\n"
            )
