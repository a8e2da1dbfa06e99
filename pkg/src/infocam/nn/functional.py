"""Numerically stable activations and loss heads.

All functions operate on 64-bit floats.  Vector arguments are one logit per
class; batched variants (suffix ``_batch``) take a ``(B, M)`` array and are
what the training loop uses.
"""

import numpy as np


def log_sum_exp(values, axis=-1):
    """Stable log(sum(exp(values))) along ``axis``.

    Uses the max-shift trick, so it does not overflow for entries up to
    ~1e300 in magnitude.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("log_sum_exp requires finite inputs")
    m = np.max(v, axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(np.sum(np.exp(v - m), axis=axis))
    return float(out) if np.ndim(out) == 0 else out


def check_prior(prior, num_classes=None):
    """Validate a class-prior vector: entries in (0, 1], summing to 1."""
    p = np.asarray(prior, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("prior must be a 1-D probability vector")
    if num_classes is not None and p.shape[0] != num_classes:
        raise ValueError(
            f"prior has {p.shape[0]} entries, expected {num_classes}"
        )
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise ValueError("prior probabilities must lie in (0, 1]")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"prior sums to {p.sum()!r}, expected 1")
    return p


def softmax(logits):
    """exp(l - logsumexp(l)); rows sum to 1 to within 1e-12."""
    l = np.asarray(logits, dtype=np.float64)
    z = log_sum_exp(l, axis=-1)
    return np.exp(l - np.expand_dims(z, -1)) if l.ndim > 1 else np.exp(l - z)


def pc_softmax(logits, prior):
    """Prior-corrected softmax: exp(l_y) / sum_y' P(y') exp(l_y').

    Not a probability vector in general; with a uniform prior it equals
    M * softmax(l).
    """
    l = np.asarray(logits, dtype=np.float64)
    p = check_prior(prior, l.shape[-1])
    z = log_sum_exp(l + np.log(p), axis=-1)
    return np.exp(l - np.expand_dims(z, -1)) if l.ndim > 1 else np.exp(l - z)


def cross_entropy_loss(logits, label):
    """Negative log softmax probability of ``label``.

    Returns ``(loss, grad)`` where grad is the derivative with respect to
    the logits: softmax(l) - one_hot(label).
    """
    l = np.asarray(logits, dtype=np.float64)
    m = l.shape[-1]
    if not 0 <= label < m:
        raise ValueError(f"label {label} out of range [0, {m})")
    z = log_sum_exp(l)
    loss = z - l[label]
    grad = np.exp(l - z)
    grad[label] -= 1.0
    return loss, grad


def pc_cross_entropy_loss(logits, label, prior):
    """Negative log PC-softmax score of ``label``, plus logit gradient."""
    l = np.asarray(logits, dtype=np.float64)
    m = l.shape[-1]
    if not 0 <= label < m:
        raise ValueError(f"label {label} out of range [0, {m})")
    p = check_prior(prior, m)
    z = log_sum_exp(l + np.log(p))
    loss = z - l[label]
    grad = np.exp(l + np.log(p) - z)
    grad[label] -= 1.0
    return loss, grad


def sigmoid_heads_loss(logits, labels, priors=None, corrected=False):
    """Multi-label loss: one two-class (PC-)softmax per label slot.

    Label slot j is scored as a two-class problem with logit pair
    ``(0, l_j)`` for (absent, present) and Bernoulli prior
    ``(1 - p_j, p_j)``.  With ``corrected=False`` this reduces to the
    ordinary sigmoid cross-entropy ``softplus(l_j) - b_j * l_j``.

    Returns ``(total_loss, grad)`` with grad per logit slot.
    """
    l = np.asarray(logits, dtype=np.float64)
    b = np.asarray(labels, dtype=np.float64)
    if l.shape != b.shape:
        raise ValueError("logits and labels must have matching shapes")
    if corrected:
        if priors is None:
            raise ValueError("corrected sigmoid heads require priors")
        p = np.asarray(priors, dtype=np.float64)
        if p.shape != l.shape[-1:]:
            raise ValueError("one Bernoulli prior per label slot required")
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValueError("Bernoulli priors must lie strictly in (0, 1)")
        # z_j = log((1 - p_j) + p_j * exp(l_j)), stable via logaddexp
        z = np.logaddexp(np.log1p(-p), np.log(p) + l)
        loss = float(np.sum(z - b * l))
        grad = np.exp(np.log(p) + l - z) - b
    else:
        z = np.logaddexp(0.0, l)
        loss = float(np.sum(z - b * l))
        grad = _sigmoid(l) - b
    return loss, grad


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Batched heads used by the training loop.  Each returns the mean loss over
# the batch and the gradient of that mean with respect to the logits.
# ---------------------------------------------------------------------------

def cross_entropy_batch(logits, labels):
    n = logits.shape[0]
    z = log_sum_exp(logits, axis=-1)
    loss = float(np.mean(z - logits[np.arange(n), labels]))
    grad = np.exp(logits - z[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def pc_cross_entropy_batch(logits, labels, prior):
    n = logits.shape[0]
    p = check_prior(prior, logits.shape[1])
    shifted = logits + np.log(p)
    z = log_sum_exp(shifted, axis=-1)
    loss = float(np.mean(z - logits[np.arange(n), labels]))
    grad = np.exp(shifted - z[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def sigmoid_heads_batch(logits, labels, priors=None, corrected=False):
    n = logits.shape[0]
    b = labels.astype(np.float64)
    if corrected:
        p = np.asarray(priors, dtype=np.float64)
        z = np.logaddexp(np.log1p(-p)[None, :], np.log(p)[None, :] + logits)
        loss = float(np.sum(z - b * logits) / n)
        grad = np.exp(np.log(p)[None, :] + logits - z) - b
    else:
        z = np.logaddexp(0.0, logits)
        loss = float(np.sum(z - b * logits) / n)
        grad = _sigmoid(logits) - b
    return loss, grad / n
