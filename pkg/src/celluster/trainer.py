"""Two-phase training orchestration.

Phase 1 pretrains the autoencoder on adjacency reconstruction plus the
count likelihood over the full graph. Difficulty is then measured once on
the pretrained embeddings, the hardest fraction of nodes is pruned and the
graph rebuilt, and cluster centers are seeded with k-means on the kept
embeddings. Phase 2 re-initializes Adam at its own learning rate and adds
the self-training clustering term, with each epoch's losses masked to the
easiest paced subset of kept nodes. Prediction assigns every original cell
(pruned ones included, flagged downstream) from the final soft assignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .cellgraph import CellGraph, knn_graph
from .curriculum import (
    DifficultyReport,
    PacingConfig,
    PruneResult,
    measure_difficulty,
    pacing_fraction,
    prune,
    rebuild_after_prune,
)
from .ingest import ExpressionMatrix
from .losses import (
    LossBreakdown,
    NonFiniteLossError,
    loss_cls,
    loss_rec,
    loss_zinb,
    masked_total,
    target_distribution,
)
from .model import (
    ModelParams,
    NonFiniteOutputError,
    decode_adjacency,
    decode_zinb,
    encode,
    init_params,
    soft_assign,
)
from .numerics import AdamState, adam_step
from .preprocess import PreprocessedData, preprocess


class DegenerateClusterError(RuntimeError):
    pass


class NotTrainedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    n_clusters: int
    t1: int = 1000
    t2: int = 500
    lr_pretrain: float = 5e-4
    lr_formal: float = 1e-4
    k_neighbors: int = 20
    alpha: float = 0.11
    n_hvg: int = 500
    beta: float = 0.5
    lambda0: float = 0.25
    t_hat: int | None = None  # defaults to max(1, t2 // 2)
    latent_dim: int = 32
    hidden_dim: int = 256
    cheb_order: int = 3
    zinb_dims: tuple[int, int, int] = (128, 256, 512)
    target_update_interval: int = 5
    seed: int = 0
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    convergence_tol: float = 1e-3

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        for name in ("t1", "t2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("lr_pretrain", "lr_formal", "convergence_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 < self.lambda0 <= 1.0:
            raise ValueError("lambda0 must lie in (0, 1]")
        if self.target_update_interval < 1:
            raise ValueError("target_update_interval must be >= 1")

    @property
    def effective_t_hat(self) -> int:
        return self.t_hat if self.t_hat is not None else max(1, self.t2 // 2)


@dataclass
class TrainState:
    phase: str  # "pretrain" | "formal" | "done"
    epoch: int  # epochs completed within the current phase
    params: ModelParams
    adam: AdamState
    loss_history: list[LossBreakdown] = field(default_factory=list)
    report: DifficultyReport | None = None
    prune: PruneResult | None = None
    target: np.ndarray | None = None
    labels_prev: np.ndarray | None = None
    subset_sizes: list[int] = field(default_factory=list)  # per formal epoch


# -- k-means -----------------------------------------------------------------------


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator,
                 max_iter: int = 300, tol: float = 1e-6):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total == 0.0:
            centers[i] = x[rng.integers(n)]
        else:
            centers[i] = x[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, ((x - centers[i]) ** 2).sum(axis=1))

    assignment = np.zeros(n, dtype=np.intp)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assignment = d2.argmin(axis=1)
        moved = 0.0
        degenerate = False
        new_centers = centers.copy()
        for j in range(k):
            members = x[assignment == j]
            if members.shape[0] == 0:
                degenerate = True
                break
            new_centers[j] = members.mean(axis=0)
            moved = max(moved, float(np.linalg.norm(new_centers[j] - centers[j])))
        if degenerate:
            return None
        centers = new_centers
        if moved <= tol:
            break
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assignment = d2.argmin(axis=1)
    if np.unique(assignment).size < k:
        return None
    inertia = float(d2[np.arange(n), assignment].sum())
    return centers, inertia


def init_centers(
    z: np.ndarray, n_clusters: int, seed: int = 0,
    restarts: int = 20, reseed_attempts: int = 10,
) -> np.ndarray:
    """k-means++ over `restarts` seedings; a run that converges with an empty
    cluster is re-seeded up to `reseed_attempts` times before erroring."""
    x = np.asarray(z, dtype=np.float64)
    if n_clusters > x.shape[0]:
        raise DegenerateClusterError(
            f"{n_clusters} clusters for {x.shape[0]} points"
        )
    rng = np.random.default_rng(seed)
    best = None
    best_inertia = np.inf
    for _ in range(restarts):
        outcome = None
        for _ in range(reseed_attempts):
            outcome = _kmeans_once(x, n_clusters, rng)
            if outcome is not None:
                break
        if outcome is None:
            raise DegenerateClusterError(
                f"k-means produced an empty cluster in {reseed_attempts} consecutive seedings"
            )
        centers, inertia = outcome
        if inertia < best_inertia:
            best, best_inertia = centers, inertia
    return best


# -- shared epoch machinery -----------------------------------------------------------


def _apply_gradients(params: ModelParams, adam: AdamState) -> None:
    named = params.named_parameters()
    values = [t.values for _, t in named]
    grads = [
        t.grad if t.grad is not None else np.zeros_like(t.values) for _, t in named
    ]
    updated, _ = adam_step(values, grads, adam)
    for (_, t), new in zip(named, updated):
        t.values = new
        t.grad = None


def _epoch_losses(
    pre_norm: np.ndarray,
    raw_counts: np.ndarray,
    graph: CellGraph,
    params: ModelParams,
    weights: tuple[float, float, float],
    mask=None,
    target: np.ndarray | None = None,
):
    z = encode(pre_norm, graph, params)
    a_rec = decode_adjacency(z)
    zinb_params = decode_zinb(z, params)
    rec = loss_rec(graph.adjacency, a_rec, mask=mask)
    zinb = loss_zinb(raw_counts, zinb_params, mask=mask)
    cls = None
    if target is not None:
        q = soft_assign(z, params.cluster_centers)
        cls = loss_cls(target, q, mask=mask)
    return masked_total(rec, zinb, cls, weights)


def pretrain(
    pre: PreprocessedData,
    graph: CellGraph,
    cfg: TrainConfig,
    state: TrainState | None = None,
    epochs: int | None = None,
    checkpoint_dir=None,
    checkpoint_every: int = 100,
) -> TrainState:
    """Full-batch reconstruction + likelihood training for cfg.t1 epochs
    (or resume `state` until `epochs` total)."""
    if state is None:
        params = init_params(
            n_genes=pre.n_genes,
            latent_dim=cfg.latent_dim,
            hidden_dim=cfg.hidden_dim,
            cheb_order=cfg.cheb_order,
            zinb_dims=cfg.zinb_dims,
            seed=cfg.seed,
        )
        state = TrainState(
            phase="pretrain",
            epoch=0,
            params=params,
            adam=AdamState(learning_rate=cfg.lr_pretrain),
        )
    total_epochs = cfg.t1 if epochs is None else epochs
    while state.epoch < total_epochs:
        try:
            total, breakdown = _epoch_losses(
                pre.normalized, pre.raw.counts, graph, state.params, cfg.loss_weights
            )
        except (NonFiniteLossError, NonFiniteOutputError) as err:
            raise NonFiniteLossError(
                f"pre-training diverged at epoch {state.epoch}: {err}",
                epoch=state.epoch,
                state=state,
            ) from err
        if not np.isfinite(breakdown.total):
            raise NonFiniteLossError(
                f"pre-training loss non-finite at epoch {state.epoch}",
                epoch=state.epoch,
                state=state,
            )
        total.backward()
        _apply_gradients(state.params, state.adam)
        state.loss_history.append(breakdown)
        state.epoch += 1
        if checkpoint_dir is not None and state.epoch % checkpoint_every == 0:
            save_state(state, f"{checkpoint_dir}/pretrain_epoch{state.epoch}.ckpt")
    if checkpoint_dir is not None:
        save_state(state, f"{checkpoint_dir}/pretrain_final.ckpt")
    return state


def formal_train(
    state: TrainState,
    pre: PreprocessedData,
    graph_pruned: CellGraph,
    cfg: TrainConfig,
    epochs: int | None = None,
    checkpoint_dir=None,
    checkpoint_every: int = 100,
) -> TrainState:
    """Paced self-training phase over the pruned graph.

    Per epoch: the pacing fraction (capped at 1 - alpha) of the ORIGINAL
    node count, floored, selects the easiest kept nodes; the target
    distribution refreshes every cfg.target_update_interval epochs and
    training stops early when the assignment churn between consecutive
    refreshes falls below cfg.convergence_tol.
    """
    if state.report is None or state.prune is None:
        raise NotTrainedError("formal training needs difficulty and pruning results")
    if state.params.cluster_centers is None:
        raise NotTrainedError("formal training needs initialized cluster centers")
    if state.phase == "pretrain":
        state.phase = "formal"
        state.epoch = 0
        state.adam = AdamState(learning_rate=cfg.lr_formal)  # fresh optimizer per phase

    kept_sorted = np.sort(state.prune.kept)
    position = {node: i for i, node in enumerate(kept_sorted)}
    easiest_first = np.array([position[node] for node in state.prune.kept], dtype=np.intp)
    norm_kept = pre.normalized[kept_sorted]
    raw_kept = pre.raw.counts[kept_sorted]
    n_original = state.report.n
    pacing = PacingConfig(lambda0=cfg.lambda0, t_hat=cfg.effective_t_hat)

    total_epochs = cfg.t2 if epochs is None else epochs
    converged = False
    while state.epoch < total_epochs:
        t = state.epoch
        if t % cfg.target_update_interval == 0:
            z = encode(norm_kept, graph_pruned, state.params)
            q = soft_assign(z, state.params.cluster_centers).values
            labels_now = q.argmax(axis=1)
            if state.labels_prev is not None:
                changed = float(np.mean(labels_now != state.labels_prev))
                if changed < cfg.convergence_tol:
                    state.labels_prev = labels_now
                    converged = True
                    break
            state.labels_prev = labels_now
            state.target = target_distribution(q)

        fraction = pacing_fraction(t, pacing, cfg.alpha)
        count = min(int(np.floor(fraction * n_original)), kept_sorted.size)
        if count == 0:
            raise ValueError(
                f"pacing selects zero nodes at epoch {t} "
                f"(lambda0={cfg.lambda0}, {n_original} nodes); raise lambda0"
            )
        subset = np.sort(easiest_first[:count])
        state.subset_sizes.append(count)

        try:
            total, breakdown = _epoch_losses(
                norm_kept,
                raw_kept,
                graph_pruned,
                state.params,
                cfg.loss_weights,
                mask=subset,
                target=state.target,
            )
        except (NonFiniteLossError, NonFiniteOutputError) as err:
            raise NonFiniteLossError(
                f"formal training diverged at epoch {t}: {err}", epoch=t, state=state
            ) from err
        if not np.isfinite(breakdown.total):
            raise NonFiniteLossError(
                f"formal loss non-finite at epoch {t}", epoch=t, state=state
            )
        total.backward()
        _apply_gradients(state.params, state.adam)
        state.loss_history.append(breakdown)
        state.epoch += 1
        if checkpoint_dir is not None and state.epoch % checkpoint_every == 0:
            save_state(state, f"{checkpoint_dir}/formal_epoch{state.epoch}.ckpt")
    if converged or state.epoch >= cfg.t2:  # partial stepping stays resumable
        state.phase = "done"
        if checkpoint_dir is not None:
            save_state(state, f"{checkpoint_dir}/formal_final.ckpt")
    return state


def predict(state: TrainState, pre: PreprocessedData, graph: CellGraph) -> np.ndarray:
    """Hard labels for every original node from the final soft assignment;
    argmax ties resolve to the lower cluster index."""
    if state.phase != "done":
        raise NotTrainedError(f"predict called in phase {state.phase!r}")
    if state.params.cluster_centers is None:
        raise NotTrainedError("no cluster centers; was formal training run?")
    z = encode(pre.normalized, graph, state.params)
    q = soft_assign(z, state.params.cluster_centers).values
    return q.argmax(axis=1).astype(np.int64)


# -- state persistence -----------------------------------------------------------------


_PHASES = ("pretrain", "formal", "done")


def save_state(state: TrainState, path) -> None:
    arrays: dict[str, np.ndarray] = {
        "meta.phase": np.array(float(_PHASES.index(state.phase))),
        "meta.epoch": np.array(float(state.epoch)),
    }
    for name, tensor in state.params.named_parameters():
        arrays[f"param.{name}"] = tensor.values
    arrays["adam.lr"] = np.array(state.adam.learning_rate)
    arrays["adam.step"] = np.array(float(state.adam.step))
    for i, (m, v) in enumerate(zip(state.adam.first_moment, state.adam.second_moment)):
        arrays[f"adam.m{i}"] = m
        arrays[f"adam.v{i}"] = v
    if state.loss_history:
        arrays["history"] = np.array([b.as_row() for b in state.loss_history])
    if state.report is not None:
        arrays["report.local"] = state.report.local
        arrays["report.global"] = state.report.global_
        arrays["report.combined"] = state.report.combined
        arrays["report.order"] = state.report.order.astype(np.float64)
        arrays["report.beta"] = np.array(state.report.beta)
    if state.prune is not None:
        arrays["prune.kept"] = state.prune.kept.astype(np.float64)
        arrays["prune.dropped"] = state.prune.dropped.astype(np.float64)
        arrays["prune.alpha"] = np.array(state.prune.alpha)
    if state.target is not None:
        arrays["target"] = state.target
    if state.labels_prev is not None:
        arrays["labels_prev"] = state.labels_prev.astype(np.float64)
    if state.subset_sizes:
        arrays["subset_sizes"] = np.array(state.subset_sizes, dtype=np.float64)
    nm.save_checkpoint(path, arrays)


def load_state(path, cfg: TrainConfig, n_genes: int) -> TrainState:
    arrays = nm.load_checkpoint(path)
    params = init_params(
        n_genes=n_genes,
        latent_dim=cfg.latent_dim,
        hidden_dim=cfg.hidden_dim,
        cheb_order=cfg.cheb_order,
        zinb_dims=cfg.zinb_dims,
        seed=cfg.seed,
    )
    if "param.cluster_centers" in arrays:
        params = params.with_centers(arrays["param.cluster_centers"])
    for name, tensor in params.named_parameters():
        tensor.values = arrays[f"param.{name}"]
    adam = AdamState(learning_rate=float(arrays["adam.lr"]), step=int(arrays["adam.step"]))
    moments_m, moments_v = [], []
    i = 0
    while f"adam.m{i}" in arrays:
        moments_m.append(arrays[f"adam.m{i}"])
        moments_v.append(arrays[f"adam.v{i}"])
        i += 1
    adam.first_moment = moments_m
    adam.second_moment = moments_v
    history = [
        LossBreakdown(rec=float(row[0]), zinb=float(row[1]), cls=float(row[2]))
        for row in arrays.get("history", np.empty((0, 4)))
    ]
    report = None
    if "report.local" in arrays:
        report = DifficultyReport(
            local=arrays["report.local"],
            global_=arrays["report.global"],
            combined=arrays["report.combined"],
            order=arrays["report.order"].astype(np.intp),
            beta=float(arrays["report.beta"]),
        )
    prune_result = None
    if "prune.kept" in arrays:
        prune_result = PruneResult(
            kept=arrays["prune.kept"].astype(np.intp),
            dropped=arrays["prune.dropped"].astype(np.intp),
            alpha=float(arrays["prune.alpha"]),
        )
    return TrainState(
        phase=_PHASES[int(arrays["meta.phase"])],
        epoch=int(arrays["meta.epoch"]),
        params=params,
        adam=adam,
        loss_history=history,
        report=report,
        prune=prune_result,
        target=arrays.get("target"),
        labels_prev=(
            arrays["labels_prev"].astype(np.int64) if "labels_prev" in arrays else None
        ),
        subset_sizes=(
            arrays["subset_sizes"].astype(int).tolist() if "subset_sizes" in arrays else []
        ),
    )


# -- end-to-end pipeline ------------------------------------------------------------------


@dataclass
class PipelineResult:
    config: TrainConfig
    state: TrainState
    preprocessed: PreprocessedData
    graph: CellGraph
    graph_pruned: CellGraph
    kept_sorted: np.ndarray
    labels: np.ndarray  # every original cell
    pruned_mask: np.ndarray  # True where the cell was pruned before phase 2


def run_pipeline(
    data: ExpressionMatrix,
    cfg: TrainConfig,
    laplacian_kind: str = "sym_normalized",
    prune_strategy: str = "hard",
    local_mode: str = "literal",
    checkpoint_dir=None,
) -> PipelineResult:
    pre = preprocess(data, cfg.n_hvg)
    graph = knn_graph(pre.normalized, cfg.k_neighbors, laplacian_kind)
    state = pretrain(pre, graph, cfg, checkpoint_dir=checkpoint_dir)

    z = encode(pre.normalized, graph, state.params).values
    state.report = measure_difficulty(z, graph, beta=cfg.beta, local_mode=local_mode)
    state.prune = prune(state.report, cfg.alpha, strategy=prune_strategy, seed=cfg.seed)
    graph_pruned, kept_sorted = rebuild_after_prune(graph, state.prune)

    centers = init_centers(z[kept_sorted], cfg.n_clusters, seed=cfg.seed)
    state.params = state.params.with_centers(centers)

    state = formal_train(state, pre, graph_pruned, cfg, checkpoint_dir=checkpoint_dir)
    labels = predict(state, pre, graph)
    pruned_mask = np.zeros(data.n_cells, dtype=bool)
    pruned_mask[state.prune.dropped] = True
    return PipelineResult(
        config=cfg,
        state=state,
        preprocessed=pre,
        graph=graph,
        graph_pruned=graph_pruned,
        kept_sorted=kept_sorted,
        labels=labels,
        pruned_mask=pruned_mask,
    )
