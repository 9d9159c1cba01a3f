"""Training losses and the center-loss center update."""
import numpy as np

from .ops import center_loss, cross_entropy

__all__ = ["cross_entropy", "center_loss", "update_centers"]


def update_centers(centers, embeddings, labels, alpha=0.5):
    """EMA of per-class batch means; classes absent from the batch keep their center."""
    centers = np.array(centers, copy=True)
    embeddings = np.asarray(embeddings)
    labels = np.asarray(labels)
    for k in range(centers.shape[0]):
        sel = labels == k
        if sel.any():
            centers[k] = (1 - alpha) * centers[k] + alpha * embeddings[sel].mean(axis=0)
    return centers
