"""Pretraining losses, fine-tuning losses and evaluation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .autodiff import Tensor, add, cosine_similarity, mean_pool, mul, scale, sigmoid, softmax


class EmptyMaskError(ValueError):
    pass


@dataclass
class LossReport:
    l_rec: float
    l_con: float
    total: float
    masked_count: int
    batch_size: int

    def as_dict(self) -> dict:
        return asdict(self)


def _sum(x: Tensor) -> Tensor:
    return scale(mean_pool(x), float(x.data.size))


def reconstruction_loss(x, x_hat, M) -> Tensor:
    """Squared error summed over masked patches, divided by the number of masked patches.

    ``x``/``x_hat`` are ``[..., C, N, P]`` and ``M`` is ``[..., C, N]``.
    Cells outside ``M`` do not influence the value.
    """
    M = np.asarray(M)
    count = int(M.sum())
    if count == 0:
        raise EmptyMaskError("reconstruction loss needs at least one masked patch")
    if not isinstance(x_hat, Tensor):
        x_hat = Tensor(np.asarray(x_hat))
    dtype = x_hat.dtype
    gate = M[..., None].astype(dtype)
    resid = mul(add(x_hat, -np.asarray(x, dtype=dtype)), gate)
    return scale(_sum(mul(resid, resid)), 1.0 / count)


def infonce_loss(h_s, h_t, tau: float = 0.2) -> Tensor:
    """Mean over anchors of ``-log softmax_j(cos(h_s[i], h_t[j]) / tau)[i]``."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    h_s = h_s if isinstance(h_s, Tensor) else Tensor(np.asarray(h_s))
    B = h_s.shape[0]
    logits = scale(cosine_similarity(h_s, h_t), 1.0 / tau)
    logp = softmax(logits, axis=-1, log=True)
    diag = np.eye(B, dtype=logp.dtype)
    return scale(_sum(mul(logp, diag)), -1.0 / B)


def total_loss(l_rec, l_con, alpha: float = 1.0, beta: float = 1.0):
    if isinstance(l_rec, Tensor) or isinstance(l_con, Tensor):
        return add(scale(l_rec, alpha), scale(l_con, beta))
    return alpha * l_rec + beta * l_con


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Softmax cross-entropy for integer labels ``[B]``."""
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    onehot = np.zeros((B, K), dtype=logits.dtype)
    onehot[np.arange(B), labels] = 1.0
    return scale(_sum(mul(softmax(logits, axis=-1, log=True), onehot)), -1.0 / B)


def binary_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean per-label BCE with logits for multi-hot ``targets`` ``[B, K]``."""
    y = np.asarray(targets, dtype=logits.dtype)
    pos = sigmoid(logits, log=True)
    neg = sigmoid(scale(logits, -1.0), log=True)
    ll = add(mul(pos, y), mul(neg, 1.0 - y))
    return scale(mean_pool(ll), -1.0)


# -------------------------------------------------------------------- metrics


def binary_auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC undefined without both positives and negatives")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _f1(tp, fp, fn) -> float:
    return 2 * tp / (2 * tp + fp + fn)


def metrics(probs, labels, multilabel: bool = False, threshold: float = 0.5) -> dict:
    """ACC, macro F1 and macro AUROC.

    Single-label: ACC and F1 use the argmax decision. Multi-label: every
    (sample, label) decision is thresholded and ACC is the micro label
    accuracy. Classes lacking both a positive and a negative are left out
    of the AUROC average; classes with no positives and no predicted
    positives are left out of the F1 average.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("metrics need at least one sample")
    B, K = probs.shape
    if multilabel:
        truth = np.asarray(labels).astype(bool).reshape(B, K)
        pred = probs >= threshold
        acc = float((pred == truth).mean())
    else:
        lab = np.asarray(labels, dtype=np.int64).reshape(B)
        truth = np.zeros((B, K), dtype=bool)
        truth[np.arange(B), lab] = True
        pred = np.zeros((B, K), dtype=bool)
        pred[np.arange(B), probs.argmax(axis=1)] = True
        acc = float((probs.argmax(axis=1) == lab).mean())
    f1s, aucs = [], []
    for k in range(K):
        t, p = truth[:, k], pred[:, k]
        tp, fp, fn = int((t & p).sum()), int((~t & p).sum()), int((t & ~p).sum())
        if tp + fp + fn:
            f1s.append(_f1(tp, fp, fn))
        if 0 < t.sum() < B:
            aucs.append(binary_auroc(probs[:, k], t))
    return {
        "acc": acc,
        "macro_f1": float(np.mean(f1s)) if f1s else float("nan"),
        "macro_auroc": float(np.mean(aucs)) if aucs else float("nan"),
    }
