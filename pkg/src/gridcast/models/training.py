"""Training loop and prediction glue for the recurrent nets.

The loop is deterministic given the config seed: shuffle order and dropout
masks both derive from it, so repeat runs produce bitwise-identical
checkpoints and loss traces.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import sequence


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 55
    epochs: int = 200
    seed: int = 0


def train_net(net, stack, refs, look_back, subgrid, config):
    """Optimize net in place with Adam on masked BCE; returns the loss trace.

    refs index training samples in `stack` (see sequence.materialize_batch).
    Masked cells never enter the loss. A non-finite loss aborts immediately
    rather than letting Adam march on garbage.
    """
    if not refs:
        raise ValueError("no training samples")
    if config.epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {config.epochs}")
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0)))
    drop_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
    params = net.parameters()
    state = ad.AdamState(lr=config.lr)
    trace = []
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(len(refs))
        total = 0.0
        for lo in range(0, len(refs), config.batch_size):
            batch_refs = [refs[j] for j in perm[lo:lo + config.batch_size]]
            x, y, valid = sequence.materialize_batch(stack, batch_refs, look_back, subgrid)
            probs = net.forward(net.prepare_inputs(x), "train", drop_rng)
            loss = ad.bce_loss(probs, y, mask=valid)
            if not np.isfinite(loss.data):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}")
            loss.backward()
            grads = {name: p.grad for name, p in params.items()}
            ad.adam_step({name: p.data for name, p in params.items()}, grads, state)
            for p in params.values():
                p.grad = None
            total += float(loss.data) * len(batch_refs)
        trace.append((epoch, total / len(refs)))
    return trace


def predict_net(net, stack, refs, look_back, subgrid, batch_size=64):
    """Inference-mode probabilities for refs, stacked as (n, M, M) float64."""
    out = []
    for lo in range(0, len(refs), batch_size):
        x, _, _ = sequence.materialize_batch(stack, refs[lo:lo + batch_size], look_back, subgrid)
        probs = net.forward(net.prepare_inputs(x), "infer")
        out.append(np.asarray(probs.data, dtype=np.float64))
    return np.concatenate(out, axis=0)


def predict_binary(probs, threshold=0.5):
    """1 where p >= threshold, else 0."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return (np.asarray(probs) >= threshold).astype(np.int8)


def save_net(path, net):
    arrays = {f"param.{name}": p.data for name, p in net.parameters().items()}
    arrays.update({f"buffer.{name}": arr for name, arr in net.buffers().items()})
    ad.save_checkpoint(path, arrays)


def load_net(path, net):
    """Load a checkpoint into an already-constructed net; names must match."""
    arrays = ad.load_checkpoint(path)
    params = net.parameters()
    want = {f"param.{name}" for name in params}
    want |= {f"buffer.{name}" for name in net.buffers()}
    if set(arrays) != want:
        missing = sorted(want - set(arrays))
        extra = sorted(set(arrays) - want)
        raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
    for name, p in params.items():
        arr = arrays[f"param.{name}"]
        if arr.shape != p.data.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != {p.data.shape}")
        p.data[...] = arr
    buffers = {name[len("buffer."):]: arr for name, arr in arrays.items()
               if name.startswith("buffer.")}
    net.load_buffers(buffers)
    return net


def save_loss_trace(path, trace):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("epoch,train_loss\n")
        for epoch, loss in trace:
            f.write(f"{epoch},{loss!r}\n")
    os.replace(tmp, path)


def load_loss_trace(path):
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "epoch,train_loss":
            raise ValueError(f"{path}: unexpected header {header!r}")
        out = []
        for line in f:
            epoch, loss = line.strip().split(",")
            out.append((int(epoch), float(loss)))
    return out
