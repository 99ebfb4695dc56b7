"""Optimal bipartite matching between ground-truth items and query predictions.

The training cost mixes classification probability and coordinate deviation;
the inference cost uses classification probability alone. A shortest
augmenting path (Jonker-Volgenant) solver handles rectangular matrices with
deterministic lowest-column tie-breaking; a factorial brute-force search
serves as the independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError


@dataclass
class CostMatrix:
    values: np.ndarray  # [n_targets x Q]
    mode: str  # "train" | "infer"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError(f"cost matrix must be 2-D, got shape {self.values.shape}")
        if self.values.shape[0] > self.values.shape[1]:
            raise ContractError(
                f"need n_targets <= n_queries, got {self.values.shape[0]} x {self.values.shape[1]}"
            )


@dataclass
class Matching:
    assignment: np.ndarray  # sigma: target index -> query column
    total_cost: float


def cost_train(target_classes, target_coords, pred_probs, pred_coords):
    """Training cost: entry (i, q) = -p_q(c_i) + L1(b_i, b_q)."""
    target_classes = np.asarray(target_classes, dtype=np.intp)
    target_coords = np.asarray(target_coords, dtype=np.float64)
    pred_probs = np.asarray(pred_probs, dtype=np.float64)
    pred_coords = np.asarray(pred_coords, dtype=np.float64)
    if target_coords.shape[1] != pred_coords.shape[1]:
        raise ContractError(
            f"coordinate arity mismatch: targets {target_coords.shape} vs preds {pred_coords.shape}"
        )
    if target_classes.shape[0] != target_coords.shape[0]:
        raise ContractError("one class label per target required")
    class_cost = -pred_probs[:, target_classes].T  # [n_targets x Q]
    l1 = np.abs(target_coords[:, None, :] - pred_coords[None, :, :]).sum(axis=2)
    return CostMatrix(class_cost + l1, mode="train")


def cost_infer(classes, pred_probs, exclude_background=False):
    """Inference cost: entry (j, q) = -p_q(c_j), probabilities only.

    With ``exclude_background`` the background column of the probabilities is
    dropped and the rest renormalized before building the cost.
    """
    classes = np.asarray(classes, dtype=np.intp)
    probs = np.asarray(pred_probs, dtype=np.float64)
    if exclude_background:
        fg = probs[:, :-1]
        probs = fg / fg.sum(axis=1, keepdims=True)
    return CostMatrix(-probs[:, classes].T, mode="infer")


def brute_force_match(cost):
    """Exhaustive search over all injective assignments. Test oracle."""
    values = cost.values
    n, q = values.shape
    if n > 7:
        raise ContractError(f"brute force limited to 7 targets, got {n}")
    best_sigma = None
    best_cost = np.inf
    sigma = np.empty(n, dtype=np.intp)
    used = np.zeros(q, dtype=bool)

    def recurse(i, acc):
        nonlocal best_sigma, best_cost
        if i == n:
            if acc < best_cost:
                best_cost = acc
                best_sigma = sigma.copy()
            return
        for col in range(q):
            if not used[col]:
                used[col] = True
                sigma[i] = col
                recurse(i + 1, acc + values[i, col])
                used[col] = False

    recurse(0, 0.0)
    return Matching(best_sigma, float(best_cost))


def hungarian_solve(cost):
    """Globally optimal assignment via shortest augmenting paths.

    Rows are augmented in order; among equal-cost alternatives the lowest
    column index is reached first, which fixes deterministic tie-breaking.
    Rectangular matrices are handled directly (n_targets <= Q).
    """
    values = cost.values
    if not np.isfinite(values).all():
        raise NumericError("cost matrix contains non-finite entries")
    n, q = values.shape
    # column potentials; row potentials are implicit in the reduced costs
    u = np.zeros(n + 1)
    v = np.zeros(q + 1)
    # col_row[c] = row assigned to column c (q = virtual column)
    col_row = np.full(q + 1, -1, dtype=np.intp)
    for i in range(n):
        col_row[q] = i
        j0 = q
        minv = np.full(q + 1, np.inf)
        way = np.full(q + 1, q, dtype=np.intp)
        used = np.zeros(q + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            delta = np.inf
            j1 = -1
            for j in range(q):
                if used[j]:
                    continue
                cur = values[i0, j] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(q + 1):
                if used[j]:
                    u[col_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if col_row[j0] == -1:
                break
        while j0 != q:
            j1 = way[j0]
            col_row[j0] = col_row[j1]
            j0 = j1
    sigma = np.empty(n, dtype=np.intp)
    for j in range(q):
        if col_row[j] >= 0:
            sigma[col_row[j]] = j
    total = float(values[np.arange(n), sigma].sum())
    return Matching(sigma, total)
