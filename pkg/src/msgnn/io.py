"""File formats: edge lists, feature/label/mask CSVs, metric CSVs.

Edge-list files hold whitespace-separated 0-based ``u v`` pairs, one per
line; the loader symmetrizes and dedupes.  Features travel as CSV with
header ``node,f0..f{c-1}``, labels as ``node,label``, masks as
``node,split`` with split in {train,val,test}.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .graphs import GraphError, LabelVector, Masks, SparseGraph


def load_edge_list(path, num_nodes: int | None = None) -> SparseGraph:
    """Read an edge-list file; infers node count as max index + 1 if absent."""
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise GraphError(f"{path}:{lineno}: expected 'u v', got {line!r}")
            pairs.append((int(parts[0]), int(parts[1])))
    if num_nodes is None:
        num_nodes = 1 + max((max(u, v) for u, v in pairs), default=-1)
    return SparseGraph.from_edges(num_nodes, pairs)


def save_edge_list(g: SparseGraph, path) -> None:
    """Write each undirected edge once as 'u v' with u < v."""
    with open(path, "w") as fh:
        for u in range(g.num_nodes):
            for v in g.neighbors(u):
                if u < v:
                    fh.write(f"{u} {int(v)}\n")


def load_features_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "node":
            raise GraphError(f"{path}: feature header must start with 'node'")
        rows = sorted((int(r[0]), [float(v) for v in r[1:]]) for r in reader)
    if [i for i, _ in rows] != list(range(len(rows))):
        raise GraphError(f"{path}: node column must cover 0..n-1")
    return np.array([vals for _, vals in rows], dtype=np.float64)


def save_features_csv(x: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node"] + [f"f{j}" for j in range(x.shape[1])])
        for i, row in enumerate(x):
            writer.writerow([i] + [repr(float(v)) for v in row])


def load_labels_csv(path, num_classes: int | None = None) -> LabelVector:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["node", "label"]:
            raise GraphError(f"{path}: label header must be 'node,label'")
        rows = sorted((int(r[0]), int(r[1])) for r in reader)
    labels = np.array([lab for _, lab in rows], dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return LabelVector(labels, num_classes)


def save_labels_csv(y: LabelVector, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "label"])
        for i, lab in enumerate(y.labels):
            writer.writerow([i, int(lab)])


def load_masks_csv(path, num_nodes: int) -> Masks:
    train = np.zeros(num_nodes, dtype=bool)
    val = np.zeros(num_nodes, dtype=bool)
    test = np.zeros(num_nodes, dtype=bool)
    by_name = {"train": train, "val": val, "test": test}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["node", "split"]:
            raise GraphError(f"{path}: mask header must be 'node,split'")
        for r in reader:
            node, split = int(r[0]), r[1]
            if split not in by_name:
                raise GraphError(f"{path}: unknown split {split!r}")
            by_name[split][node] = True
    return Masks(train, val, test)


def save_masks_csv(masks: Masks, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "split"])
        for name in ("train", "val", "test"):
            for node in np.flatnonzero(getattr(masks, name)):
                writer.writerow([int(node), name])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
