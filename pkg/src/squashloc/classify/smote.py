from __future__ import annotations

import numpy as np


def smote(minority, k: int = 5, amount: float = 1.0, rng_seed: int | None = 0,
          return_pairs: bool = False):
    """Synthetic minority over-sampling.

    Each synthetic point is ``x + u * (x_nn - x)`` for a random minority
    sample ``x``, one of its ``k`` nearest minority neighbours ``x_nn`` and
    ``u ~ U(0, 1)``. Produces ``floor(amount * len(minority))`` points.
    With ``return_pairs`` the (x index, neighbour index, u) triples are
    returned as well.
    """
    X = np.asarray([getattr(m, "values", m) for m in minority], dtype=float)
    if X.ndim != 2:
        raise ValueError("minority samples must be equal-length vectors")
    n = X.shape[0]
    if n <= k:
        raise ValueError(f"SMOTE needs more than k={k} minority samples, got {n}")
    count = int(np.floor(amount * n))
    rng = np.random.default_rng(rng_seed)

    sq = np.einsum("ij,ij->i", X, X)
    dist = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(dist, np.inf)
    neighbours = np.argsort(dist, axis=1, kind="stable")[:, :k]

    base = rng.integers(0, n, size=count)
    pick = neighbours[base, rng.integers(0, k, size=count)]
    u = rng.uniform(0.0, 1.0, size=count)
    synthetic = X[base] + u[:, None] * (X[pick] - X[base])
    if return_pairs:
        return synthetic, np.stack([base, pick], axis=1), u
    return synthetic


def balance(X, y, k: int = 5, rng_seed: int | None = 0):
    """Oversample the minority binary class until both classes are equally large."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    pos, neg = X[y == 1], X[y == 0]
    minority, label = (pos, 1) if len(pos) < len(neg) else (neg, 0)
    deficit = abs(len(pos) - len(neg))
    if deficit == 0 or len(minority) == 0:
        return X, y
    k_eff = min(k, len(minority) - 1)
    if k_eff < 1:
        synthetic = np.repeat(minority, deficit, axis=0)
    else:
        synthetic = smote(minority, k_eff, deficit / len(minority), rng_seed)
        # floor() may leave the classes one short
        while len(synthetic) < deficit:
            extra = smote(minority, k_eff, 1.0, None if rng_seed is None else rng_seed + len(synthetic))
            synthetic = np.concatenate([synthetic, extra[: deficit - len(synthetic)]])
    X_out = np.concatenate([X, synthetic])
    y_out = np.concatenate([y, np.full(len(synthetic), label)])
    return X_out, y_out
