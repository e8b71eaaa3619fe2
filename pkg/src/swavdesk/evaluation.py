"""Feature-quality measurements on frozen representations."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import NumericRangeError, ShapeError, SwavError, log_softmax_rows


def _unit(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def knn_predict(train_feats, train_labels, test_feats, k: int = 20, chunk: int = 1024) -> np.ndarray:
    """Cosine k-NN majority vote; ties go to the larger summed similarity, then the lower label."""
    tr = _unit(train_feats)
    te = _unit(test_feats)
    y = np.asarray(train_labels, dtype=np.int64)
    if tr.shape[0] == 0 or te.shape[0] == 0:
        raise SwavError("k-NN needs non-empty train and test sets")
    if not 1 <= k <= tr.shape[0]:
        raise SwavError(f"k={k} must be in [1, {tr.shape[0]}]")
    n_cls = int(y.max()) + 1
    preds = np.empty(te.shape[0], dtype=np.int64)
    for start in range(0, te.shape[0], chunk):
        sim = te[start:start + chunk] @ tr.T
        nn = np.argpartition(-sim, k - 1, axis=1)[:, :k]
        nn_sim = np.take_along_axis(sim, nn, axis=1)
        nn_lab = y[nn]
        rows = np.arange(nn.shape[0])[:, None]
        votes = np.zeros((nn.shape[0], n_cls))
        sims = np.zeros((nn.shape[0], n_cls))
        np.add.at(votes, (rows, nn_lab), 1.0)
        np.add.at(sims, (rows, nn_lab), nn_sim)
        best = votes.max(axis=1, keepdims=True)
        sims = np.where(votes == best, sims, -np.inf)
        preds[start:start + chunk] = np.argmax(sims, axis=1)
    return preds


def knn_classify(train_feats, train_labels, test_feats, test_labels, k: int = 20) -> float:
    preds = knn_predict(train_feats, train_labels, test_feats, k)
    return float(np.mean(preds == np.asarray(test_labels)))


def linear_probe_fit(train_feats, train_labels, epochs: int = 200, lr: float = 1.0, n_classes=None):
    """Full-batch gradient descent on multinomial logistic regression.

    The weight step is divided by the mean squared feature norm, which makes
    the fitted classifier's decisions independent of a global feature scale.
    """
    x = np.asarray(train_feats, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.int64)
    n, d = x.shape
    k = int(n_classes or y.max() + 1)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    m2 = float(np.mean(np.einsum("ij,ij->i", x, x)))
    w_scale = lr / m2 if m2 > 0 else 0.0
    w = np.zeros((d, k))
    b = np.zeros(k)
    for _ in range(epochs):
        logp = log_softmax_rows(x @ w + b)
        loss = -(onehot * logp).sum() / n
        if not math.isfinite(loss):
            raise NumericRangeError("linear probe loss became non-finite")
        g = (np.exp(logp) - onehot) / n
        w -= w_scale * (x.T @ g)
        b -= lr * g.sum(axis=0)
    return w, b


def linear_probe(train_feats, train_labels, test_feats, test_labels, epochs: int = 200, lr: float = 1.0) -> float:
    w, b = linear_probe_fit(train_feats, train_labels, epochs, lr,
                            n_classes=max(np.max(train_labels), np.max(test_labels)) + 1)
    pred = np.argmax(np.asarray(test_feats, dtype=np.float64) @ w + b, axis=1)
    return float(np.mean(pred == np.asarray(test_labels)))


def _entropy_of_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Mutual information over the arithmetic mean of the two label entropies."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"labelings differ in length: {a.shape} vs {b.shape}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    ha = _entropy_of_counts(joint.sum(axis=1))
    hb = _entropy_of_counts(joint.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    n = joint.sum()
    pij = joint / n
    outer = np.outer(joint.sum(axis=1), joint.sum(axis=0)) / n**2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(np.clip(mi / (0.5 * (ha + hb)), 0.0, 1.0))


COLLAPSE_STD = 1e-4
COLLAPSE_ENTROPY_FRACTION = 0.1


def collapse_diagnostics(codes_over_epoch, feats) -> tuple[float, float, bool]:
    """Return ``(code_mean_entropy, feature_std, collapse_flag)``.

    ``codes_over_epoch`` is a sequence of per-batch code matrices (B x K); the
    entropy of each batch-mean code is averaged over the epoch.  Collapse is
    flagged when the mean per-dimension feature std drops below 1e-4, or
    when every batch-mean code has entropy below a tenth of ``log K``.
    """
    feats = np.asarray(feats, dtype=np.float64)
    feature_std = float(feats.std(axis=0).mean()) if feats.size else 0.0
    entropies = []
    log_k = None
    for q in codes_over_epoch:
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        mean = q.mean(axis=0)
        mean = mean / mean.sum()
        nz = mean[mean > 0]
        entropies.append(float(-(nz * np.log(nz)).sum()))
        log_k = math.log(q.shape[1])
    code_entropy = float(np.mean(entropies)) if entropies else float("nan")
    flag = feature_std < COLLAPSE_STD
    if entropies and log_k and log_k > 0:
        flag = flag or all(h < COLLAPSE_ENTROPY_FRACTION * log_k for h in entropies)
    return code_entropy, feature_std, bool(flag)


@dataclass
class EvalReport:
    knn_acc: dict = field(default_factory=dict)
    linear_acc: float | None = None
    nmi: float | None = None
    code_mean_entropy: float | None = None
    feature_std: float | None = None
    collapse_flag: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["knn_acc"] = {str(k): v for k, v in self.knn_acc.items()}
        return d
