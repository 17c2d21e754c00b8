"""Evaluation: weighted F1, top-k accuracy, Ward clustering, 2D embedding.

Ward clustering is agglomerative: at every step the pair of clusters whose
merge least increases the total within-cluster sum of squared deviations is
merged, with costs maintained by the Lance-Williams recurrence. Ties pick the
smallest (i, j) cluster-id pair; merged clusters receive fresh ids N, N+1, ...
in merge order, so the procedure is fully deterministic.

The 2D embedding is a deterministic PCA (power iteration with deflation),
standing in for stochastic neighborhood embeddings so exports stay testable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class MetricBlock:
    weighted_f1: float
    top1: float
    top3: float
    precision: np.ndarray  # per class
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray


@dataclass(frozen=True)
class ClusterReport:
    assignments: np.ndarray  # item -> cluster id in [0, k)
    merges: tuple[tuple[int, int, float], ...]  # (id_a, id_b, cost) per merge
    k: int


def _validate_labels(y: np.ndarray, num_classes: int, name: str) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ParameterError(f"{name} is empty")
    if y.min() < 0 or y.max() >= num_classes:
        raise ParameterError(f"{name} labels outside [0, {num_classes}): range [{y.min()}, {y.max()}]")
    return y


def weighted_f1(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int):
    """Label-frequency-weighted mean of per-class F1 scores.

    Returns (score, per_class) where per_class holds precision, recall, f1 and
    support arrays. A class with precision + recall = 0 scores F1 = 0.
    """
    y_true = _validate_labels(y_true, num_classes, "y_true")
    y_pred = _validate_labels(y_pred, num_classes, "y_pred")
    if y_true.shape != y_pred.shape:
        raise ParameterError(f"y_true and y_pred differ in length: {y_true.shape} vs {y_pred.shape}")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    pred_count = confusion.sum(axis=0).astype(np.float64)
    true_count = confusion.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_count, out=np.zeros(num_classes), where=pred_count > 0)
    recall = np.divide(tp, true_count, out=np.zeros(num_classes), where=true_count > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(num_classes), where=pr > 0)
    weights = true_count / y_true.size
    return float((weights * f1).sum()), {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "support": true_count.astype(np.int64),
    }


def topk_accuracy(logits: np.ndarray, y_true: np.ndarray, k: int) -> float:
    """Fraction of rows whose label is among the k largest logits.

    Ties between equal logits resolve toward the lower class index.
    """
    logits = np.asarray(logits)
    num_classes = logits.shape[1]
    if k > num_classes or k < 1:
        raise ParameterError(f"k={k} outside [1, {num_classes}]")
    y_true = _validate_labels(y_true, num_classes, "y_true")
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    hits = (order == y_true[:, None]).any(axis=1)
    return float(hits.mean())


def compute_metrics(logits: np.ndarray, y_true: np.ndarray, k: int = 3) -> MetricBlock:
    num_classes = logits.shape[1]
    y_pred = np.argmax(logits, axis=1)
    score, per_class = weighted_f1(y_true, y_pred, num_classes)
    top1 = topk_accuracy(logits, y_true, 1)
    top3 = topk_accuracy(logits, y_true, min(k, num_classes))
    return MetricBlock(
        weighted_f1=score,
        top1=top1,
        top3=top3,
        precision=per_class["precision"],
        recall=per_class["recall"],
        f1=per_class["f1"],
        support=per_class["support"],
    )


def ward_cluster(features: np.ndarray, k: int) -> ClusterReport:
    """Agglomerate N feature vectors down to k clusters by Ward's criterion.

    The recorded merge cost is the increase in total within-cluster sum of
    squares, |A||B| / (|A|+|B|) * ||mean_A - mean_B||^2.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} outside [1, {n}]")
    total = 2 * n - k  # ids ever allocated
    cost = np.full((total, total), np.inf)
    sq = (x * x).sum(axis=1)
    pair = sq[:, None] + sq[None, :] - 2 * (x @ x.T)
    iu = np.triu_indices(n, 1)
    cost[:n, :n][iu] = np.maximum(pair[iu], 0.0) / 2.0  # singleton Ward cost

    active = list(range(n))
    sizes = {i: 1 for i in range(n)}
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    merges: list[tuple[int, int, float]] = []
    next_id = n
    for _ in range(n - k):
        sub = cost[np.ix_(active, active)]
        flat = int(np.argmin(sub))  # row-major scan -> smallest (i, j) on ties
        a_pos, b_pos = divmod(flat, len(active))
        id_a, id_b = active[a_pos], active[b_pos]
        merge_cost = float(sub[a_pos, b_pos])
        n_a, n_b = sizes[id_a], sizes[id_b]
        new_id = next_id
        next_id += 1
        # Lance-Williams update of Ward costs against every other active cluster
        for other in active:
            if other in (id_a, id_b):
                continue
            n_o = sizes[other]
            d_ao = cost[min(id_a, other), max(id_a, other)]
            d_bo = cost[min(id_b, other), max(id_b, other)]
            new_cost = ((n_a + n_o) * d_ao + (n_b + n_o) * d_bo - n_o * merge_cost) / (
                n_a + n_b + n_o
            )
            cost[other, new_id] = new_cost
        sizes[new_id] = n_a + n_b
        members[new_id] = members.pop(id_a) + members.pop(id_b)
        active.remove(id_a)
        active.remove(id_b)
        active.append(new_id)
        merges.append((id_a, id_b, merge_cost))

    assignments = np.empty(n, dtype=np.int64)
    for cluster_index, cluster_id in enumerate(sorted(active)):
        assignments[members[cluster_id]] = cluster_index
    return ClusterReport(assignments=assignments, merges=tuple(merges), k=k)


def cluster_composition(
    report: ClusterReport, labels: np.ndarray, top_m: int | None = None
) -> dict[int, list[tuple[int, float]]]:
    """Per cluster: the top_m most frequent labels with their percentage share.

    Rows sort by descending percentage, ties toward the lower label id. With
    top_m None every label present is listed and percentages sum to 100.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != report.assignments.shape[0]:
        raise ParameterError(
            f"labels length {labels.shape[0]} does not match {report.assignments.shape[0]} clustered items"
        )
    table: dict[int, list[tuple[int, float]]] = {}
    for cluster in range(report.k):
        mask = report.assignments == cluster
        size = int(mask.sum())
        counts: dict[int, int] = {}
        for lab in labels[mask]:
            counts[int(lab)] = counts.get(int(lab), 0) + 1
        rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if top_m is not None:
            rows = rows[:top_m]
        table[cluster] = [(lab, 100.0 * cnt / size) for lab, cnt in rows]
    return table


def embed_2d(features: np.ndarray, seed: int = 0, iterations: int = 100) -> np.ndarray:
    """Deterministic 2D PCA projection via power iteration with deflation.

    Components are sign-fixed so the first nonzero loading is positive; axis 1
    carries at least as much variance as axis 2. Zero-variance input maps to
    all-zero coordinates.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] < 2:
        raise ParameterError(f"embed_2d needs >= 2 rows, got {x.shape[0]}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    scale = float(np.trace(cov))
    rng = np.random.default_rng(seed)
    coords = np.zeros((x.shape[0], 2))
    for axis in range(2):
        v = rng.normal(size=x.shape[1])
        for _ in range(iterations):
            v = cov @ v
            norm = np.linalg.norm(v)
            if norm < 1e-300:
                break
            v = v / norm
        eigenvalue = float(v @ cov @ v)
        if scale <= 0 or eigenvalue <= 1e-12 * max(scale, 1.0):
            break
        nonzero = np.nonzero(np.abs(v) > 1e-12)[0]
        if nonzero.size and v[nonzero[0]] < 0:
            v = -v
        coords[:, axis] = centered @ v
        cov = cov - eigenvalue * np.outer(v, v)
    return coords


# --- CSV export ------------------------------------------------------------


def write_metrics_csv(path: str, rows: list[tuple[str, str, MetricBlock]]) -> None:
    """Rows of `model,dataset,f1,top1,top3`, scores as percentages."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["model", "dataset", "f1", "top1", "top3"])
        for model_name, dataset, block in rows:
            writer.writerow(
                [
                    model_name,
                    dataset,
                    f"{100 * block.weighted_f1:.2f}",
                    f"{100 * block.top1:.2f}",
                    f"{100 * block.top3:.2f}",
                ]
            )


def write_cluster_csv(path: str, table: dict[int, list[tuple[int, float]]], class_names) -> None:
    """Rows of `cluster,label,percent`."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["cluster", "label", "percent"])
        for cluster in sorted(table):
            for label, percent in table[cluster]:
                writer.writerow([cluster + 1, class_names[label], f"{percent:.1f}"])


def write_embedding_csv(
    path: str,
    coords: np.ndarray,
    labels: np.ndarray,
    brain_ids: np.ndarray,
    assignments: np.ndarray,
) -> None:
    """Rows of `x,y,label,brain_id,cluster`."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "label", "brain_id", "cluster"])
        for i in range(coords.shape[0]):
            writer.writerow(
                [
                    f"{coords[i, 0]:.6f}",
                    f"{coords[i, 1]:.6f}",
                    int(labels[i]),
                    int(brain_ids[i]),
                    int(assignments[i]),
                ]
            )
