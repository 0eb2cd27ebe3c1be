"""Independent dense reference implementations used by the tests."""

import numpy as np


def chebyshev_spectral(lap_dense, x, thetas, bias):
    """Filter in the eigenbasis: U diag(T_k(lambda)) U^T x theta_k, T_k = cos(k arccos)."""
    lam, U = np.linalg.eigh(lap_dense)
    lam = np.clip(lam, -1.0, 1.0)
    xf = U.T @ x
    y = np.zeros((x.shape[0], thetas[0].shape[1]))
    for k, theta in enumerate(thetas):
        tk = np.cos(k * np.arccos(lam))
        y += U @ (tk[:, None] * xf) @ theta
    return y + bias


def dense_gat(x, adj, theta, a_src, a_dst, slope):
    """Materialize the full n x n attention matrix with a -inf mask."""
    h = x @ theta
    logits = (h @ a_src) + (h @ a_dst).T
    logits = np.where(logits > 0, logits, slope * logits)
    allowed = (adj + np.eye(adj.shape[0])) > 0
    logits = np.where(allowed, logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    alpha = w / w.sum(axis=1, keepdims=True)
    return alpha @ h, alpha


def auc_pairs(scores, labels):
    """Brute-force pair count: (wins + ties / 2) / (n_pos * n_neg)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = ties = 0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))
