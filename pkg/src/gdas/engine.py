"""Alternating search: W on the training split, A on the validation split."""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import sampler
from . import tensor as T
from .data import Dataset, SplitDataset, batches
from .network import Network, NetworkPlan
from .sampler import TemperatureSchedule, anneal_tau
from .search_space import SELECTION_MODES, ArchParams, SearchSpaceSpec, Supernet
from .tensor import Tensor

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# schedules and optimizers
# ----------------------------------------------------------------------

def cosine_lr(step: float, total: float, lr_max: float = 0.025, lr_min: float = 1e-3) -> float:
    if total <= 0:
        return lr_max
    step = min(max(step, 0), total)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total))


class SGD:
    """Momentum SGD with decoupled weight decay. Params without a grad are skipped."""

    def __init__(self, params, lr=0.025, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.buf: dict[int, np.ndarray] = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.momentum:
                b = self.buf.get(id(p))
                b = g.copy() if b is None else self.momentum * b + g
                self.buf[id(p)] = b
                g = b
            p.data = p.data - lr * g - lr * self.weight_decay * p.data


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=3e-4, betas=(0.5, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr, self.eps, self.weight_decay = lr, eps, weight_decay
        self.beta1, self.beta2 = betas
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat, vhat = self.m[i] / c1, self.v[i] / c2
            p.data = p.data - lr * self.weight_decay * p.data - lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(float(np.sum([np.vdot(g, g) for g in grads]))) if grads else 0.0
    if max_norm and total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * s
    return total


@contextlib.contextmanager
def frozen(params):
    """Temporarily mark tensors as not requiring gradients."""
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


# ----------------------------------------------------------------------
# losses and evaluation
# ----------------------------------------------------------------------

def loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the softmax classifier."""
    return T.cross_entropy(logits, labels)


def accuracy(logits: np.ndarray, labels) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def evaluate(net: Network, ds: Dataset, **forward_kwargs) -> tuple[float, float]:
    """Loss and accuracy over ``ds`` in one batch, without recording a graph."""
    with T.no_grad():
        logits = net(Tensor(ds.x), **forward_kwargs)
        return loss(logits, ds.y).item(), accuracy(logits.data, ds.y)


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

@dataclass
class SearchConfig:
    epochs: int = 240
    batch_size: int = 32
    w_lr_max: float = 0.025
    w_lr_min: float = 1e-3
    w_momentum: float = 0.9
    w_weight_decay: float = 3e-4
    w_grad_clip: float = 5.0
    a_lr: float = 3e-4
    a_weight_decay: float = 1e-3
    a_betas: tuple[float, float] = (0.5, 0.999)
    tau_start: float = 10.0
    tau_end: float = 0.1
    seed: int = 0
    accelerated: bool = True
    mode: str = "hard_sampled"
    fixed_reduction_cell: bool = False

    def __post_init__(self):
        self.a_betas = tuple(self.a_betas)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("w_lr_max", "w_lr_min", "a_lr", "tau_start", "tau_end"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"mode must be one of {SELECTION_MODES}")

    @property
    def selection_mode(self) -> str:
        return "accelerated" if self.accelerated else self.mode

    def to_dict(self) -> dict:
        d = asdict(self)
        d["a_betas"] = list(self.a_betas)
        return d


@dataclass
class SearchResult:
    arch: ArchParams
    metrics: list[dict]
    snapshots: list[dict] = field(default_factory=list)
    supernet: Supernet | None = None


# ----------------------------------------------------------------------
# the search engine
# ----------------------------------------------------------------------

class SearchEngine:
    def __init__(self, config: SearchConfig, split: SplitDataset, spec: SearchSpaceSpec,
                 plan: NetworkPlan):
        self.config = config
        self.split = split
        self.spec = spec
        self.plan = plan
        seed = config.seed
        self.net = Supernet(spec, plan, fixed_reduction=config.fixed_reduction_cell,
                            seed=sampler.derive_seed(seed, "supernet") % (2 ** 32),
                            arch_seed=sampler.derive_seed(seed, "arch") % (2 ** 32))
        self.w_params = self.net.weight_parameters()
        self.a_params = self.net.arch.parameters()
        self.w_opt = SGD(self.w_params, config.w_lr_max, config.w_momentum, config.w_weight_decay)
        self.a_opt = Adam(self.a_params, config.a_lr, config.a_betas, weight_decay=config.a_weight_decay)
        n_train = len(split.train)
        self.iters_per_epoch = math.ceil(n_train / config.batch_size)
        self.total_iters = config.epochs * self.iters_per_epoch
        self.tau_schedule = TemperatureSchedule(max(self.total_iters, 1), config.tau_start, config.tau_end)
        self.iteration = 0

    # schedules at the current iteration
    @property
    def tau(self) -> float:
        return anneal_tau(self.tau_schedule, min(self.iteration, self.tau_schedule.total_steps))

    @property
    def lr_w(self) -> float:
        return cosine_lr(self.iteration, self.total_iters, self.config.w_lr_max, self.config.w_lr_min)

    @property
    def lr_a(self) -> float:
        return self.config.a_lr

    def noise(self, phase: str):
        seed, it = self.config.seed, self.iteration
        return lambda cell, e, k: sampler.noise_for(seed, it, cell, e, k, phase)

    def _forward_loss(self, x, y, phase: str, arch_grad: bool, mode: str | None = None):
        logits = self.net(Tensor(x), mode=mode or self.config.selection_mode, tau=self.tau,
                          noise=self.noise(phase), arch_grad=arch_grad)
        out = loss(logits, y)
        if not np.isfinite(out.data):
            raise NonFiniteLossError(f"non-finite {phase}-step loss at iteration {self.iteration}")
        return out, logits

    def step_W(self, x, y) -> tuple[float, float]:
        """One SGD update of the operation weights on a training batch; A untouched."""
        self.w_opt.zero_grad()
        out, logits = self._forward_loss(x, y, "W", arch_grad=False)
        out.backward()
        if self.config.w_grad_clip:
            clip_grad_norm(self.w_params, self.config.w_grad_clip)
        self.w_opt.step(self.lr_w)
        self.w_opt.zero_grad()
        return out.item(), accuracy(logits.data, y)

    def step_A(self, x, y) -> tuple[float, float]:
        """One Adam update of the architecture logits on a validation batch; W untouched."""
        self.a_opt.zero_grad()
        with frozen(self.w_params):
            out, logits = self._forward_loss(x, y, "A", arch_grad=True)
            out.backward()
        self.a_opt.step(self.lr_a)
        self.a_opt.zero_grad()
        return out.item(), accuracy(logits.data, y)

    def accelerated_pass(self, x, y, phase: str = "A", mode: str = "accelerated",
                         retain: bool = False) -> tuple[float, dict[str, np.ndarray]]:
        """Forward + backward without an update; returns loss and A gradients per cell type."""
        for p in self.a_params + self.w_params:
            p.grad = None
        logits = self.net(Tensor(x), mode=mode, tau=self.tau, noise=self.noise(phase),
                          arch_grad=True, retain=retain)
        out = loss(logits, y)
        out.backward()
        grads = {ct: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                 for ct, t in self.net.arch.tensors.items()}
        return out.item(), grads

    def snapshot(self, epoch: int) -> dict:
        d = self.net.arch.to_dict()
        d["epoch"] = epoch
        d["iteration"] = self.iteration
        return d

    def run(self, log_every_epoch=None) -> SearchResult:
        cfg = self.config
        metrics: list[dict] = []
        snapshots: list[dict] = []
        tr, va = self.split.train, self.split.val
        for epoch in range(1, cfg.epochs + 1):
            rng = sampler.rng_for(cfg.seed, "batches", epoch)
            tb = batches(len(tr), cfg.batch_size, rng)
            vb = batches(len(va), cfg.batch_size, rng)
            stats = {"train": [], "val": []}
            for n, bt in enumerate(tb):
                bv = vb[n % len(vb)]
                stats["train"].append((*self.step_W(tr.x[bt], tr.y[bt]), len(bt)))
                stats["val"].append((*self.step_A(va.x[bv], va.y[bv]), len(bv)))
                self.iteration += 1
            tau, lr_w = self.tau, self.lr_w
            for split_name in ("train", "val"):
                rows = np.asarray(stats[split_name])
                w = rows[:, 2]
                metrics.append(dict(epoch=epoch, iter=self.iteration, split=split_name,
                                    loss=float(np.dot(rows[:, 0], w) / w.sum()),
                                    accuracy=float(np.dot(rows[:, 1], w) / w.sum()),
                                    tau=tau, lr_W=lr_w, lr_A=self.lr_a))
            snapshots.append(self.snapshot(epoch))
            if log_every_epoch:
                log_every_epoch(epoch, metrics[-2:], snapshots[-1])
        return SearchResult(self.net.arch, metrics, snapshots, self.net)


def run_search(config: SearchConfig, split: SplitDataset, spec: SearchSpaceSpec,
               plan: NetworkPlan, callback=None) -> SearchResult:
    return SearchEngine(config, split, spec, plan).run(callback)


# ----------------------------------------------------------------------
# plain training of a fixed network
# ----------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr_max: float = 0.025
    lr_min: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 3e-4
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def train_network(net: Network, train: Dataset, cfg: TrainConfig, seed: int = 0,
                  eval_set: Dataset | None = None, eval_every_epoch: bool = False) -> list[dict]:
    """Train all network weights with momentum SGD and a cosine rate.

    Returns one row per epoch with the mean training loss/accuracy and, when
    ``eval_set`` is given and ``eval_every_epoch`` is set (or on the last
    epoch), the evaluation loss/accuracy.
    """
    params = net.parameters()
    opt = SGD(params, cfg.lr_max, cfg.momentum, cfg.weight_decay)
    iters = math.ceil(len(train) / cfg.batch_size)
    total = cfg.epochs * iters
    it = 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        rng = sampler.rng_for(seed, "train-batches", epoch)
        tot_loss = tot_acc = 0.0
        for b in batches(len(train), cfg.batch_size, rng):
            opt.zero_grad()
            logits = net(Tensor(train.x[b]))
            out = loss(logits, train.y[b])
            if not np.isfinite(out.data):
                raise NonFiniteLossError(f"non-finite training loss at epoch {epoch}, iteration {it}")
            out.backward()
            if cfg.grad_clip:
                clip_grad_norm(params, cfg.grad_clip)
            lr = cosine_lr(it, total, cfg.lr_max, cfg.lr_min)
            opt.step(lr)
            it += 1
            tot_loss += out.item() * len(b)
            tot_acc += accuracy(logits.data, train.y[b]) * len(b)
        row = dict(epoch=epoch, train_loss=tot_loss / len(train), train_acc=tot_acc / len(train), lr=lr)
        if eval_set is not None and (eval_every_epoch or epoch == cfg.epochs):
            row["eval_loss"], row["eval_acc"] = evaluate(net, eval_set)
        history.append(row)
    opt.zero_grad()
    return history
