"""Classifier-based pointwise and aggregate mutual information estimates.

A trained softmax classifier scores a sample-label pair with
``pmi = n_y - logsumexp(n) + log M``; averaging this over held-out pairs
estimates the mutual information between inputs and labels.  With
non-uniform label priors the prior-corrected form drops the ``log M``
constant and reweights the denominator instead.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .nn.functional import check_prior, log_sum_exp, pc_softmax, softmax

_EVAL_BATCH = 1024


@dataclass(frozen=True)
class MiEstimate:
    """Mean pointwise score in nats, with its Monte-Carlo standard error."""

    value: float
    n_samples: int
    std_error: float

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("estimate requires at least one sample")
        if self.std_error < 0:
            raise ValueError("standard error cannot be negative")


def pmi(logits):
    """Pointwise MI of the input with each label: n_y - logsumexp(n) + log M."""
    l = np.asarray(logits, dtype=np.float64)
    m = l.shape[-1]
    z = log_sum_exp(l, axis=-1)
    return l - np.expand_dims(z, -1) + np.log(m) if l.ndim > 1 \
        else l - z + np.log(m)


def pc_pmi(logits, prior):
    """Prior-corrected pointwise MI: log of the PC-softmax score."""
    l = np.asarray(logits, dtype=np.float64)
    p = check_prior(prior, l.shape[-1])
    z = log_sum_exp(l + np.log(p), axis=-1)
    return l - np.expand_dims(z, -1) if l.ndim > 1 else l - z


def batched_logits(net, inputs, batch_size=_EVAL_BATCH):
    """Forward a whole dataset in fixed-size chunks; returns (N, M) logits."""
    chunks = []
    for start in range(0, len(inputs), batch_size):
        logits, _ = net.forward_batch(inputs[start:start + batch_size])
        chunks.append(logits)
    return np.concatenate(chunks)


def estimate_mi(net, data, prior=None):
    """Mean pointwise MI at the true labels over a dataset.

    ``prior=None`` uses the plain-softmax form (log M constant); passing
    the empirical class prior uses the prior-corrected form instead.
    """
    if len(data) == 0:
        raise ValueError("cannot estimate MI from an empty dataset")
    logits = batched_logits(net, data.inputs)
    scores = pmi(logits) if prior is None else pc_pmi(logits, prior)
    at_label = scores[np.arange(len(data)), data.labels]
    std_error = (float(np.std(at_label, ddof=1) / np.sqrt(len(at_label)))
                 if len(at_label) > 1 else 0.0)
    return MiEstimate(value=float(np.mean(at_label)),
                      n_samples=len(at_label), std_error=std_error)


def mean_cross_entropy(net, data, prior=None):
    """Mean (PC-)cross-entropy over a dataset; log M minus the MI estimate."""
    logits = batched_logits(net, data.inputs)
    shifted = logits if prior is None else logits + np.log(check_prior(prior))
    z = log_sum_exp(shifted, axis=-1)
    return float(np.mean(z - logits[np.arange(len(data)), data.labels]))


def evaluate_classifier(net, data, head="softmax", prior=None):
    """Micro accuracy and unweighted mean of per-class recalls.

    Predictions are the argmax of the chosen head's output.  Classes absent
    from the data are excluded from the per-class mean with a warning.
    """
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = batched_logits(net, data.inputs)
    if head == "softmax":
        scores = softmax(logits)
    elif head == "pc_softmax":
        scores = pc_softmax(logits, prior)
    else:
        raise ValueError(f"unknown head {head!r}")
    preds = np.argmax(scores, axis=1)
    micro = float(np.mean(preds == data.labels))
    recalls = []
    for y in range(net.num_classes):
        mask = data.labels == y
        if not mask.any():
            warnings.warn(
                f"class {y} absent from evaluation data; excluded from "
                f"per-class accuracy", stacklevel=2)
            continue
        recalls.append(float(np.mean(preds[mask] == y)))
    return micro, float(np.mean(recalls))
