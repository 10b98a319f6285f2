"""Multilayer perceptrons, the AdaBelief optimizer and the staged LR schedule."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ACTIVATIONS = {"softplus": ad.softplus, "relu": ad.relu}


class OptimizerError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    width: int = 64
    depth: int = 1
    activation: str = "softplus"

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError(f"MLP needs depth >= 1 and width >= 1, got {self.depth}/{self.width}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("MLP input/output dims must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def layer_shapes(self):
        """(out, in) shape of every affine layer; ``depth`` hidden layers."""
        dims = [self.input_dim] + [self.width] * self.depth + [self.output_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


def init_mlp(spec, seed):
    """Uniform +-sqrt(1/fan_in) weights and biases, as a list of (W, b) arrays."""
    rng = np.random.Generator(np.random.Philox(seed))
    params = []
    for out_dim, in_dim in spec.layer_shapes():
        bound = np.sqrt(1.0 / in_dim)
        W = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=(out_dim, 1))
        params.append((W, b))
    return params


def mlp_forward(spec, params, x):
    """Apply the MLP to ``x`` whose columns are samples.

    ``params`` is a list of (W, b) pairs of Nodes; no activation follows
    the last layer.
    """
    x = ad.constant(x)
    if x.rows != spec.input_dim:
        raise ad.DimensionError(
            f"MLP expects {spec.input_dim} input rows, got input of shape {x.shape}")
    act = ACTIVATIONS[spec.activation]
    h = x
    last = len(params) - 1
    for i, (W, b) in enumerate(params):
        h = ad.add(ad.matmul(W, h), b)
        if i != last:
            h = act(h)
    return h


@dataclass
class AdaBelief:
    """AdaBelief over a dict of named parameter arrays.

    s tracks the squared deviation of the gradient from its running mean
    (the "belief") instead of the raw squared gradient.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-16
    t: int = 0
    m: dict = field(default_factory=dict)
    s: dict = field(default_factory=dict)

    def step(self, params, grads, lr, lr_scale=None):
        """Return updated copies of ``params``; ``lr_scale`` maps names to LR multipliers."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient in parameter block {name!r}")
        self.t += 1
        b1, b2, eps, t = self.beta1, self.beta2, self.eps, self.t
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        lr_scale = lr_scale or {}
        out = {}
        for name, theta in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(theta)
                self.s[name] = np.zeros_like(theta)
            m = b1 * m + (1.0 - b1) * g
            d = g - m
            s = b2 * self.s[name] + (1.0 - b2) * d * d + eps
            self.m[name] = m
            self.s[name] = s
            step = lr * lr_scale.get(name, 1.0)
            out[name] = theta - step * (m / bc1) / (np.sqrt(s / bc2) + eps)
        return out

    def state_dict(self):
        return {"t": self.t, "m": dict(self.m), "s": dict(self.s)}


@dataclass(frozen=True)
class LrSchedule:
    initial_rate: float = 1e-3
    decay_factor: float = 10.0
    floor_rate: float = 1e-5
    batches_per_stage: int = 2000
    stagnation_window: int = 500
    stagnation_rel_tol: float = 1e-5
    stagnation_smoothing: int = 50  # moving-average length applied before the test

    def __post_init__(self):
        if not self.initial_rate >= self.floor_rate > 0:
            raise ValueError("need initial_rate >= floor_rate > 0")
        if not self.decay_factor > 1:
            raise ValueError("decay_factor must exceed 1")
        if self.batches_per_stage < 1 or self.stagnation_window < 1 or self.stagnation_smoothing < 1:
            raise ValueError("stage length and stagnation window must be positive")

    def rates(self):
        rates = [self.initial_rate]
        while rates[-1] / self.decay_factor >= self.floor_rate * (1 - 1e-9):
            rates.append(rates[-1] / self.decay_factor)
        return rates


@dataclass(frozen=True)
class ScheduleDecision:
    lr: float
    stage: int
    stop_stage: bool
    stop_all: bool


def stagnated(stage_losses, window, rel_tol, smoothing=1):
    """True when the best loss of the last ``window`` batches barely beats the earlier best.

    With ``smoothing > 1`` the test runs on the moving average of that many
    batches, so one lucky mini-batch cannot set an unbeatable record.
    """
    if smoothing > 1:
        if len(stage_losses) < smoothing:
            return False
        c = np.cumsum(np.concatenate([[0.0], stage_losses]))
        stage_losses = (c[smoothing:] - c[:-smoothing]) / smoothing
    if len(stage_losses) <= window:
        return False
    earlier = min(stage_losses[:-window])
    recent = min(stage_losses[-window:])
    return recent > earlier - rel_tol * abs(earlier)


def schedule_next(schedule, history, stage=0):
    """Decide the learning rate after the losses of the current stage.

    ``history`` holds the per-batch losses recorded since ``stage`` began.
    """
    rates = schedule.rates()
    lr = rates[min(stage, len(rates) - 1)]
    if stage >= len(rates):
        return ScheduleDecision(lr, stage, True, True)
    done = len(history) >= schedule.batches_per_stage or stagnated(
        history, schedule.stagnation_window, schedule.stagnation_rel_tol,
        schedule.stagnation_smoothing)
    return ScheduleDecision(lr, stage, done, done and stage == len(rates) - 1)
