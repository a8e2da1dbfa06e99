"""Mini-batch training with per-epoch validation and checkpoint selection.

Training is deterministic given the seed: weight init, batch order, and
optimizer state all derive from it.  The best checkpoint is chosen across
all observed epochs (including the initial parameters) either by highest
validation accuracy or by lowest validation loss; accuracy selection is
used for image classifiers, loss selection for MI-estimation runs, where
the validation loss is an affine transform of the MI lower bound itself.
"""

from dataclasses import dataclass, field

import numpy as np

from .nn.functional import (cross_entropy_batch, pc_cross_entropy_batch,
                            sigmoid_heads_batch)
from .nn.optim import make_optimizer

HEADS = ("softmax", "pc_softmax", "sigmoid", "pc_sigmoid")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float   # None for the pre-training evaluation at epoch 0
    val_loss: float
    val_acc: float


@dataclass
class TrainLog:
    stats: list = field(default_factory=list)
    best_epoch: int = 0
    selection: str = "val_acc"

    def as_rows(self):
        return [vars(s) for s in self.stats]


def _loss_and_grad(head, logits, labels, priors):
    if head == "softmax":
        return cross_entropy_batch(logits, labels)
    if head == "pc_softmax":
        return pc_cross_entropy_batch(logits, labels, priors)
    if head == "sigmoid":
        return sigmoid_heads_batch(logits, labels, corrected=False)
    if head == "pc_sigmoid":
        return sigmoid_heads_batch(logits, labels, priors, corrected=True)
    raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")


def evaluate_loss_and_accuracy(net, inputs, labels, head, priors=None,
                               batch_size=1024):
    """Mean loss plus top-1 accuracy (single-label) or mean per-slot
    presence accuracy (multi-label)."""
    total_loss = 0.0
    correct = 0.0
    n = len(inputs)
    for start in range(0, n, batch_size):
        xb = inputs[start:start + batch_size]
        yb = labels[start:start + batch_size]
        logits, _ = net.forward_batch(xb)
        loss, _ = _loss_and_grad(head, logits, yb, priors)
        total_loss += loss * len(xb)
        if labels.ndim == 2:
            correct += np.sum((logits > 0) == (yb > 0)) / labels.shape[1]
        else:
            correct += np.sum(np.argmax(logits, axis=1) == yb)
    return float(total_loss / n), float(correct / n)


def multilabel_accuracy(net, inputs, labels, batch_size=1024):
    """Per-slot binary presence accuracy over a multi-label dataset."""
    hits = np.zeros(labels.shape[1])
    for start in range(0, len(inputs), batch_size):
        logits, _ = net.forward_batch(inputs[start:start + batch_size])
        present = labels[start:start + batch_size] > 0
        hits += np.sum((logits > 0) == present, axis=0)
    return hits / len(inputs)


def train_classifier(net, train_inputs, train_labels, valid_inputs,
                     valid_labels, *, head="softmax", priors=None,
                     epochs=20, batch_size=128, optimizer="adam", lr=1e-3,
                     momentum=0.9, seed=0, select="val_acc"):
    """Train in place and restore the best checkpoint; returns a TrainLog."""
    if head in ("pc_softmax", "pc_sigmoid") and priors is None:
        raise ValueError(f"{head} training requires priors")
    opt = make_optimizer(optimizer, lr=lr, momentum=momentum)
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, 0xBA7C])))
    log = TrainLog(selection=select)

    def snapshot():
        return [p.copy() for _, p, _ in net.param_items()]

    def restore(params):
        for (_, p, _), saved in zip(net.param_items(), params):
            p[...] = saved

    val_loss, val_acc = evaluate_loss_and_accuracy(
        net, valid_inputs, valid_labels, head, priors)
    log.stats.append(EpochStats(0, None, val_loss, val_acc))
    best = (val_acc if select == "val_acc" else -val_loss, 0, snapshot())

    n = len(train_inputs)
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            xb = train_inputs[idx]
            yb = train_labels[idx]
            logits, _ = net.forward_batch(xb)
            if not np.all(np.isfinite(logits)):
                raise FloatingPointError(
                    f"training diverged: non-finite logits at epoch {epoch}")
            loss, grad = _loss_and_grad(head, logits, yb, priors)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"training diverged: loss {loss} at epoch {epoch}")
            epoch_loss += loss * len(idx)
            net.zero_grad()
            net.backward_batch(grad)
            opt.step(net)
        val_loss, val_acc = evaluate_loss_and_accuracy(
            net, valid_inputs, valid_labels, head, priors)
        log.stats.append(EpochStats(epoch, float(epoch_loss / n), val_loss,
                                    val_acc))
        score = val_acc if select == "val_acc" else -val_loss
        if score > best[0]:
            best = (score, epoch, snapshot())

    log.best_epoch = best[1]
    restore(best[2])
    return log
