"""Set-prediction loss over matched and unmatched queries.

Matched queries pay negative log-likelihood of their target class plus L1
coordinate deviation; unmatched queries pay only the background NLL, down
weighted by 0.1 to counter class imbalance. The class term is averaged over
all queries, the coordinate term over matched targets, so scales stay
stable as the query count varies. The matching is a forward-only decision:
no gradient flows through sigma.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError

BACKGROUND_WEIGHT = 0.1


@dataclass
class LossBreakdown:
    total: object  # scalar Tensor
    class_term: float
    coord_term: float
    per_layer: list = field(default_factory=list)


def set_loss(target_classes, target_coords, class_logits, pred_coords, sigma,
             bg_weight=BACKGROUND_WEIGHT, coord_weight=1.0):
    """Loss for one decoder layer given the matching ``sigma``.

    ``class_logits`` [Q x (C+1)] and ``pred_coords`` [Q x D] are tensors;
    the background class is the last logit column. ``sigma[i]`` is the query
    matched to target i.
    """
    sigma = np.asarray(sigma, dtype=np.intp)
    if len(np.unique(sigma)) != len(sigma):
        raise ContractError("matching must be injective")
    n_queries, n_classes = class_logits.shape
    background = n_classes - 1
    target_classes = np.asarray(target_classes, dtype=np.intp)

    labels = np.full(n_queries, background, dtype=np.intp)
    labels[sigma] = target_classes
    weights = np.full(n_queries, bg_weight)
    weights[sigma] = 1.0

    logp = T.log_softmax(class_logits, axis=-1)
    nll = -T.take_per_row(logp, labels)
    class_term = T.tsum(nll * weights) * (1.0 / n_queries)

    if len(sigma):
        matched = T.gather(pred_coords, sigma, axis=0)
        l1 = T.tsum(T.absolute(matched - np.asarray(target_coords, dtype=np.float64)))
        coord_term = l1 * (coord_weight / len(sigma))
        total = class_term + coord_term
        coord_val = coord_term.item()
    else:
        total = class_term
        coord_val = 0.0
    return LossBreakdown(total=total, class_term=class_term.item(), coord_term=coord_val)


def deep_supervision_loss(target_classes, target_coords, per_layer_logits,
                          per_layer_coords, match_fn, bg_weight=BACKGROUND_WEIGHT,
                          coord_weight=1.0):
    """Average the set loss over all decoder layers, rematching each layer.

    ``match_fn(logits, coords) -> sigma`` recomputes the assignment from the
    layer's detached predictions.
    """
    n_layers = len(per_layer_logits)
    parts = []
    class_sum = coord_sum = 0.0
    for logits, coords in zip(per_layer_logits, per_layer_coords):
        sigma = match_fn(logits, coords)
        part = set_loss(target_classes, target_coords, logits, coords, sigma,
                        bg_weight=bg_weight, coord_weight=coord_weight)
        parts.append(part)
        class_sum += part.class_term
        coord_sum += part.coord_term
    total = parts[0].total
    for part in parts[1:]:
        total = total + part.total
    total = total * (1.0 / n_layers)
    return LossBreakdown(
        total=total,
        class_term=class_sum / n_layers,
        coord_term=coord_sum / n_layers,
        per_layer=[p.total.item() for p in parts],
    )
