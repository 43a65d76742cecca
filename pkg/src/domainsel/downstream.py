"""Text-pair similarity classifier and the cross-domain F1 matrix.

A three-layer dense network is trained on a source domain's pair
representations and evaluated on a target domain's test split; repeating
that over every ordered pair (and every domain with itself) under a few
seeds yields the F1 matrix. Normalizing each transfer score by the
in-domain score of its target gives the success labels the meta models
learn from: a pair succeeds when F1_ST / F1_TT exceeds the threshold
strictly.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .optim import Adam

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (128, 32)
DEFAULT_SUCCESS_THRESHOLD = 0.8


def pair_input(vec_a: np.ndarray, vec_b: np.ndarray) -> np.ndarray:
    """[a ; b ; |a-b| ; a*b], length 4d."""
    a = np.asarray(vec_a, dtype=np.float64)
    b = np.asarray(vec_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"pair_input shapes differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b, np.abs(a - b), a * b])


def f1_score(predictions, labels) -> float:
    """F1 of class 1; 0 by convention when precision + recall = 0."""
    pred = np.asarray(predictions)
    y = np.asarray(labels)
    if pred.shape != y.shape or pred.ndim != 1 or len(pred) == 0:
        raise ValidationError(
            f"f1_score needs equal-length non-empty 1-d inputs, got {pred.shape} vs {y.shape}"
        )
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


class PairClassifier:
    """Dense 3-layer net: two tanh hidden layers, sigmoid output."""

    def __init__(self, params: list[np.ndarray], input_dim: int, seed: int):
        self.params = params  # [w1, b1, w2, b2, w3, b3]
        self.input_dim = input_dim
        self.seed = seed

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValidationError(
                f"classifier expects (n, {self.input_dim}) inputs, got {X.shape}"
            )
        w1, b1, w2, b2, w3, b3 = self.params
        z1 = np.tanh(X @ w1.T + b1)
        z2 = np.tanh(z1 @ w2.T + b2)
        logits = z2 @ w3.T + b3
        return 1.0 / (1.0 + np.exp(-logits[:, 0]))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


def train_pair_classifier(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    seed: int,
    hidden: tuple[int, int] = DEFAULT_HIDDEN,
    max_epochs: int = 50,
    patience: int = 5,
    batch: int = 32,
    lr: float = 1e-3,
) -> PairClassifier:
    """Binary cross-entropy training with early stopping on validation F1.

    Keeps the parameters of the best validation epoch (the untrained state
    counts as epoch 0), so the selected model never scores below it.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    if len(X_train) == 0 or len(X_train) != len(y_train):
        raise ValidationError("empty or misaligned training set")
    if len(X_val) == 0 or len(X_val) != len(y_val):
        raise ValidationError("empty or misaligned validation set")
    classes = set(np.unique(y_train))
    if classes != {0.0, 1.0}:
        raise ValidationError(f"training set must contain both classes, got {classes}")

    n, d = X_train.shape
    h1, h2 = hidden
    rng = np.random.default_rng(seed)
    params = [
        rng.normal(0.0, 1.0 / np.sqrt(d), size=(h1, d)),
        np.zeros(h1),
        rng.normal(0.0, 1.0 / np.sqrt(h1), size=(h2, h1)),
        np.zeros(h2),
        rng.normal(0.0, 1.0 / np.sqrt(h2), size=(1, h2)),
        np.zeros(1),
    ]
    opt = Adam(params, lr=lr)
    model = PairClassifier(params, d, seed)

    def val_f1() -> float:
        return f1_score(model.predict(X_val), y_val.astype(np.int64))

    best_f1 = val_f1()
    best_params = [p.copy() for p in params]
    stale = 0
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            rows = order[start : start + batch]
            xb, yb = X_train[rows], y_train[rows]
            m = len(rows)
            w1, b1, w2, b2, w3, b3 = params
            z1 = np.tanh(xb @ w1.T + b1)
            z2 = np.tanh(z1 @ w2.T + b2)
            p = 1.0 / (1.0 + np.exp(-(z2 @ w3.T + b3)))[:, 0]
            g_logit = ((p - yb) / m)[:, None]  # BCE through sigmoid
            g_w3 = g_logit.T @ z2
            g_b3 = g_logit.sum(axis=0)
            g_z2 = (g_logit @ w3) * (1.0 - z2 * z2)
            g_w2 = g_z2.T @ z1
            g_b2 = g_z2.sum(axis=0)
            g_z1 = (g_z2 @ w2) * (1.0 - z1 * z1)
            g_w1 = g_z1.T @ xb
            g_b1 = g_z1.sum(axis=0)
            opt.step([g_w1, g_b1, g_w2, g_b2, g_w3, g_b3])
        score = val_f1()
        if score > best_f1:
            best_f1 = score
            best_params = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                log.debug("early stop at epoch %d (best val F1 %.3f)", epoch, best_f1)
                break
    return PairClassifier(best_params, d, seed)


@dataclass(frozen=True)
class F1Matrix:
    """Rows are sources, columns targets; diagonal holds in-domain scores."""

    domains: tuple[str, ...]
    per_seed: dict  # seed -> (D, D) array
    mean: np.ndarray
    variant: str

    def __post_init__(self):
        d = len(self.domains)
        for seed, m in self.per_seed.items():
            if m.shape != (d, d):
                raise ValidationError(f"seed {seed} matrix shape {m.shape} != ({d},{d})")
            if np.any(m < 0) or np.any(m > 1):
                raise ValidationError(f"seed {seed} matrix has entries outside [0,1]")
        expected = np.mean([self.per_seed[s] for s in sorted(self.per_seed)], axis=0)
        if not np.allclose(self.mean, expected, atol=1e-12):
            raise ValidationError("mean matrix is not the mean of per-seed matrices")

    def entry(self, source: str, target: str) -> float:
        i = self.domains.index(source)
        j = self.domains.index(target)
        return float(self.mean[i, j])


def cross_domain_matrix(
    domains,
    pair_data,
    variant: str,
    seeds,
    **train_kwargs,
) -> F1Matrix:
    """Train/evaluate every ordered domain pair under each seed.

    ``pair_data(S, T)`` must return (X_train, y_train, X_val, y_val,
    X_test, y_test): source-split training and validation representations
    and target test representations, already encoded for this variant
    (identity for the in-domain diagonal).
    """
    domains = tuple(domains)
    seeds = tuple(seeds)
    d = len(domains)
    per_seed = {}
    for seed in seeds:
        m = np.zeros((d, d))
        for i, source in enumerate(domains):
            for j, target in enumerate(domains):
                X_tr, y_tr, X_va, y_va, X_te, y_te = pair_data(source, target)
                clf = train_pair_classifier(X_tr, y_tr, X_va, y_va, seed=seed, **train_kwargs)
                m[i, j] = f1_score(clf.predict(X_te), np.asarray(y_te, dtype=np.int64))
        per_seed[seed] = m
        log.debug("f1 matrix variant=%s seed=%d done", variant, seed)
    mean = np.mean([per_seed[s] for s in sorted(per_seed)], axis=0)
    return F1Matrix(domains=domains, per_seed=per_seed, mean=mean, variant=variant)


def success_labels(matrix: F1Matrix, threshold: float = DEFAULT_SUCCESS_THRESHOLD):
    """Normalized transfer scores and strict-threshold success flags.

    Returns (normalized, success): both keyed by ordered (source, target),
    normalized(S,T) = mean F1_ST / mean F1_TT, success iff ratio > threshold.
    """
    domains = matrix.domains
    for j, t in enumerate(domains):
        if matrix.mean[j, j] == 0.0:
            raise ValidationError(f"in-domain F1 for '{t}' is zero; cannot normalize")
    normalized = {}
    success = {}
    for i, s in enumerate(domains):
        for j, t in enumerate(domains):
            ratio = float(matrix.mean[i, j] / matrix.mean[j, j])
            normalized[(s, t)] = ratio
            success[(s, t)] = ratio > threshold
    return normalized, success


def save_f1_matrix(matrix: F1Matrix, directory, threshold: float) -> None:
    """One CSV per seed plus the mean, and a JSON sidecar manifest."""
    def write(path, m):
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([""] + list(matrix.domains))
            for i, s in enumerate(matrix.domains):
                writer.writerow([s] + [format(x, ".17g") for x in m[i]])

    base = f"f1_{matrix.variant}"
    for seed in sorted(matrix.per_seed):
        write(directory / f"{base}_seed{seed}.csv", matrix.per_seed[seed])
    write(directory / f"{base}_mean.csv", matrix.mean)
    manifest = {
        "variant": matrix.variant,
        "seeds": sorted(int(s) for s in matrix.per_seed),
        "threshold": threshold,
        "domains": list(matrix.domains),
    }
    with open(directory / f"{base}.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)


def load_f1_matrix(directory, variant: str) -> tuple[F1Matrix, float]:
    base = f"f1_{variant}"
    with open(directory / f"{base}.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    domains = tuple(manifest["domains"])

    def read(path):
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0][1:] != list(domains):
            raise ValidationError(f"{path}: column header mismatch")
        out = np.zeros((len(domains), len(domains)))
        for i, row in enumerate(rows[1:]):
            if row[0] != domains[i]:
                raise ValidationError(f"{path}: row header mismatch at {i}")
            out[i] = [float(x) for x in row[1:]]
        return out

    per_seed = {s: read(directory / f"{base}_seed{s}.csv") for s in manifest["seeds"]}
    mean = read(directory / f"{base}_mean.csv")
    matrix = F1Matrix(domains=domains, per_seed=per_seed, mean=mean, variant=variant)
    return matrix, float(manifest["threshold"])
