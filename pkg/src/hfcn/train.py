"""Mini-batch SGD fine-tuning for actionness FCNs and proposal classifiers."""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .optim import sgd_momentum_step, zeros_like_params

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    """Learning-rate milestones and layer-freezing policy.

    The first ``frozen_layers`` conv layers are never updated; the next
    ``reduced_layers`` conv layers train at ``reduced_lr_multiplier`` times
    the current rate.  Per-layer ``lr_mult``/``trainable`` from the network
    spec apply on top.
    """

    batch_size: int = 100
    momentum: float = 0.9
    milestones: list = field(default_factory=lambda: [(0, 1e-2), (1000, 1e-3), (2000, 1e-4)])
    total_iterations: int = 3000
    frozen_layers: int = 3
    reduced_lr_multiplier: float = 0.1
    reduced_layers: int = 2
    input_size: tuple = (224, 224)
    target_size: tuple = (14, 14)

    def __post_init__(self):
        self.milestones = [(int(i), float(r)) for i, r in self.milestones]
        its = [i for i, _ in self.milestones]
        if not its or its[0] != 0:
            raise ValueError("first milestone must start at iteration 0")
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("milestone iterations must be strictly increasing")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be non-negative")

    def rate_at(self, iteration):
        rate = self.milestones[0][1]
        for start, r in self.milestones:
            if iteration >= start:
                rate = r
        return rate

    @classmethod
    def full_scale(cls):
        """The full-scale fine-tuning recipe (3K iterations, batch 100)."""
        return cls()


def layer_multipliers(spec, schedule):
    """Effective lr multiplier per conv layer name (0 means frozen)."""
    mults = {}
    for i, ls in enumerate(spec.conv_layers):
        if i < schedule.frozen_layers or not ls.trainable:
            m = 0.0
        elif i < schedule.frozen_layers + schedule.reduced_layers:
            m = schedule.reduced_lr_multiplier
        else:
            m = 1.0
        mults[ls.name] = m * ls.lr_mult
    return mults


def _prepare_inputs(net, inputs, size):
    if size is None:
        shapes = {x.shape for x in inputs}
        if len(shapes) != 1:
            raise ValueError("inputs differ in size; set schedule.input_size")
        return np.stack(inputs).astype(np.float32)
    h, w = size
    return np.stack([ops.bilinear_resize(np.asarray(x, np.float32), h, w) for x in inputs])


def _prepare_targets(targets, out_hw, dense):
    if dense:
        out = []
        for t in targets:
            t = np.asarray(t)
            if t.shape != out_hw:
                t = ops.nearest_resize(t, *out_hw)
            if t.shape != out_hw:
                raise ValueError(f"target size {t.shape} does not match network output {out_hw}")
            out.append(t)
        return np.stack(out).astype(np.intp)
    return np.asarray(targets, dtype=np.intp).reshape(-1, 1, 1)


def fine_tune(net, dataset, schedule, seed=0, dense=True):
    """Train a copy of ``net`` on ``dataset`` and return it.

    ``dataset`` holds ``(input, target)`` pairs.  With ``dense=True`` each
    target is a binary map, resized by nearest neighbour to the network
    output; otherwise targets are class indices for networks whose output
    is 1x1 (proposal classifiers).  The returned network carries the
    per-iteration mean loss in ``loss_history``.
    """
    if not dataset:
        raise ValueError("empty training set")
    net = net.copy()
    net.loss_history = []
    if schedule.total_iterations == 0:
        return net
    inputs = [x for x, _ in dataset]
    size = schedule.input_size if dense else None
    if size is not None and all(np.shape(x)[:2] == tuple(size) for x in inputs):
        size = None
    xs = _prepare_inputs(net, inputs, size)
    net.check_input(xs)
    out_hw = net.output_size(*xs.shape[1:3])
    if not dense and out_hw != (1, 1):
        raise ValueError(f"classifier output must be 1x1, got {out_hw}")
    ts = _prepare_targets([t for _, t in dataset], out_hw, dense)
    if dense and schedule.target_size and tuple(schedule.target_size) != out_hw:
        log.debug("schedule target size %s overridden by network output %s",
                  schedule.target_size, out_hw)

    mults = layer_multipliers(net.spec, schedule)
    params = net.parameters()
    trainable = {k: v for k, v in params.items() if mults[k.rsplit(".", 1)[0]] > 0}
    velocity = zeros_like_params(trainable)
    rng = np.random.default_rng(seed)
    n_pix = out_hw[0] * out_hw[1]
    for it in range(schedule.total_iterations):
        idx = rng.integers(0, len(xs), size=schedule.batch_size)
        xb, tb = xs[idx], ts[idx]
        prob = net.forward(xb, train=True)
        picked = np.take_along_axis(prob, tb[..., None], axis=-1)
        loss = float(-np.log(np.clip(picked, ops.EPS, 1.0).astype(np.float64)).sum()) / len(idx)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        net.loss_history.append(loss)
        # per-pixel mean keeps step sizes independent of map and batch size
        dlogits = ops.softmax_cross_entropy_grad(prob, tb) / (len(idx) * n_pix)
        grads = net.backward(dlogits)
        rate = schedule.rate_at(it)
        for name in trainable:
            lr = rate * mults[name.rsplit(".", 1)[0]]
            p, v = sgd_momentum_step({name: trainable[name]}, {name: grads[name]},
                                     {name: velocity[name]}, lr, schedule.momentum)
            trainable[name], velocity[name] = p[name], v[name]
        net.set_parameters({**net.parameters(), **trainable})
        if it % 100 == 0:
            log.info("iter %d lr %.3g loss %.4f", it, rate, loss)
    return net
