"""Pure-numpy kernels for the fused loss/gradient inner loops.

Same call signatures as the compiled extension (`_ckernels`); import goes
through `prototune.kernels`, which picks whichever backend is available.

Shapes: x (B, d) raw embeddings, cats (K, d) raw category prototypes,
ex (M, n_e, d) raw example prototypes.  "Raw" means unnormalized; all
similarities are cosine and gradients are with respect to raw vectors.
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def _unit_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=-1)
    return m / norms[..., None], norms


def ce_cosine_fb(
    x: np.ndarray,
    cats: np.ndarray,
    targets: np.ndarray,
    tau: float,
    want_dx: bool,
):
    """Mean cross-entropy of softmax(tau * cosine(x, cats)) against targets.

    Returns (loss, dcats, dx or None); gradients are of the mean loss with
    respect to the raw (unnormalized) inputs.
    """
    xh, xn = _unit_rows(x)
    ch, cn = _unit_rows(cats)
    s = xh @ ch.T  # (B, K) cosines
    z = tau * s
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    b = x.shape[0]
    rows = np.arange(b)
    loss = float(-np.log(p[rows, targets]).mean())
    g = p
    g[rows, targets] -= 1.0
    g *= tau / b  # dL/ds
    dcats = (g.T @ xh - (g * s).sum(axis=0)[:, None] * ch) / cn[:, None]
    dx = None
    if want_dx:
        dx = (g @ ch - (g * s).sum(axis=1)[:, None] * xh) / xn[:, None]
    return loss, dcats, dx


def sim_loss_fb(
    x: np.ndarray,
    block_of: np.ndarray,
    ex: np.ndarray,
    use_max: bool,
):
    """Mean of 1 - max_j cos(x_i, e_j) (or mean_j with use_max=False).

    `block_of[i]` selects which example block (first axis of `ex`) sample i
    is scored against.  Returns (loss, dex) with dex shaped like `ex`;
    with use_max, only each sample's argmax prototype (lowest j on ties)
    receives gradient.
    """
    b = x.shape[0]
    n_e = ex.shape[1]
    xh, _ = _unit_rows(x)
    eh, en = _unit_rows(ex)
    dex = np.zeros_like(ex)
    total = 0.0
    for m in np.unique(block_of):
        idx = np.nonzero(block_of == m)[0]
        sub = xh[idx]  # (bm, d)
        s = sub @ eh[m].T  # (bm, n_e)
        if use_max:
            j = np.argmax(s, axis=1)
            smax = s[np.arange(len(idx)), j]
            total += float((1.0 - smax).sum())
            contrib = -(sub - smax[:, None] * eh[m][j]) / (b * en[m][j][:, None])
            np.add.at(dex[m], j, contrib)
        else:
            total += float((1.0 - s.mean(axis=1)).sum())
            coeff = -1.0 / (b * n_e)
            dex[m] += coeff * (sub.sum(axis=0) - s.sum(axis=0)[:, None] * eh[m]) / en[m][:, None]
    return total / b, dex
