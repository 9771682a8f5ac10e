"""Neural CDE model, reverse-mode gradients through fixed-step solves, training.

The model is

    z(s_0) = zeta(X(s_0)),    dz/ds = f(z) dX/ds,    output = readout(z)

with ``f(z)`` a (w, v) matrix produced by an MLP whose last layer is tanh.

Gradients are exact derivatives of the *discretised* solve: the Euler or
RK4 steps are recorded on a tape during the forward sweep and replayed
backwards (discretise-then-optimise). Batches of paths sharing the same
breakpoints are solved together.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import special

from .control import ControlPath, build
from .errors import NumericalBlowup, ShapeError, UnsupportedForTraining
from .solver import FIXED_METHODS, SolveConfig, SolveResult, fixed_step_grid, integrate

logger = logging.getLogger(__name__)

TASKS = ("binary_classification", "regression")
OUTPUT_MODES = ("terminal", "sequence")
HIDDEN_ACTIVATIONS = ("relu", "softplus")


# ---------------------------------------------------------------------------
# MLP

@dataclass
class Mlp:
    """Fully connected network with ``hidden_activation`` between layers and
    ``final_activation`` at the end."""

    weights: list
    biases: list
    final_activation: str = "identity"
    hidden_activation: str = "relu"

    def __post_init__(self):
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")

    @classmethod
    def init(cls, widths: Sequence[int], rng, final_activation="identity",
             hidden_activation="relu") -> Mlp:
        # uniform in +-sqrt(1 / fan_in)
        weights, biases = [], []
        for fan_in, fan_out in itertools.pairwise(widths):
            bound = math.sqrt(1.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases, final_activation, hidden_activation)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def __call__(self, x):
        return self.forward(x)[0]

    def forward(self, x):
        """Output and the cache needed by :meth:`backward`."""
        inputs = []
        pre = []
        a = x
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            h = a @ W.T + b
            pre.append(h)
            if k < last:
                a = np.maximum(h, 0.0) if self.hidden_activation == "relu" else np.logaddexp(h, 0.0)
            elif self.final_activation == "tanh":
                a = np.tanh(h)
            else:
                a = h
        return a, (inputs, pre, a)

    def backward(self, cache, grad_out):
        """Gradients w.r.t. the input and each weight/bias, summed over leading axes."""
        inputs, pre, out = cache
        g = grad_out
        if self.final_activation == "tanh":
            g = g * (1.0 - out * out)
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            a = inputs[k]
            g2 = g.reshape(-1, g.shape[-1])
            gW[k] = g2.T @ a.reshape(-1, a.shape[-1])
            gb[k] = g2.sum(axis=0)
            g = g @ self.weights[k]
            if k > 0:
                if self.hidden_activation == "relu":
                    g = g * (pre[k - 1] > 0.0)
                else:
                    g = g * special.expit(pre[k - 1])
        return g, gW, gb

    def named_parameters(self, prefix):
        out = {}
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{k}.weight"] = W
            out[f"{prefix}.{k}.bias"] = b
        return out


# ---------------------------------------------------------------------------
# model

@dataclass
class CdeModel:
    """Initial network, vector-field network and linear readout.

    ``input_dim`` (v) is the control path's channel count, ``hidden_size``
    (w) the state size. The vector field has ``num_layers`` hidden layers of
    width ``hidden_hidden``.
    """

    zeta: Mlp
    field_net: Mlp
    readout: Mlp
    input_dim: int
    hidden_size: int

    @classmethod
    def init(cls, input_dim, hidden_size, output_dim=1, hidden_hidden=32, num_layers=1,
             seed=0, hidden_activation="relu") -> CdeModel:
        rng = np.random.default_rng(seed)
        zeta = Mlp.init([input_dim, hidden_size], rng)
        widths = [hidden_size] + [hidden_hidden] * num_layers + [hidden_size * input_dim]
        field_net = Mlp.init(widths, rng, "tanh", hidden_activation)
        readout = Mlp.init([hidden_size, output_dim], rng)
        return cls(zeta, field_net, readout, input_dim, hidden_size)

    @property
    def output_dim(self) -> int:
        return self.readout.weights[-1].shape[0]

    @property
    def architecture(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_size": self.hidden_size,
            "output_dim": self.output_dim,
            "hidden_hidden": self.field_net.widths[1] if len(self.field_net.weights) > 1 else 0,
            "num_layers": len(self.field_net.weights) - 1,
            "hidden_activation": self.field_net.hidden_activation,
        }

    def parameters(self) -> dict:
        params = {}
        params.update(self.zeta.named_parameters("zeta"))
        params.update(self.field_net.named_parameters("field"))
        params.update(self.readout.named_parameters("readout"))
        return params

    def with_parameters(self, params: dict) -> CdeModel:
        def rebuild(net, prefix):
            n = len(net.weights)
            return Mlp([np.array(params[f"{prefix}.{k}.weight"], dtype=float) for k in range(n)],
                       [np.array(params[f"{prefix}.{k}.bias"], dtype=float) for k in range(n)],
                       net.final_activation, net.hidden_activation)
        return replace(self, zeta=rebuild(self.zeta, "zeta"),
                       field_net=rebuild(self.field_net, "field"),
                       readout=rebuild(self.readout, "readout"))

    def matrix_field(self, z):
        """f(z) reshaped to (..., w, v)."""
        flat = self.field_net(z)
        return flat.reshape(flat.shape[:-1] + (self.hidden_size, self.input_dim))


def flatten_parameters(params: dict) -> np.ndarray:
    return np.concatenate([np.ravel(params[k]) for k in sorted(params)])


def unflatten_parameters(vector, like: dict) -> dict:
    out, start = {}, 0
    for k in sorted(like):
        size = np.size(like[k])
        out[k] = np.asarray(vector[start:start + size]).reshape(np.shape(like[k]))
        start += size
    return out


def _check_dims(model: CdeModel, path: ControlPath):
    if path.out_dim != model.input_dim:
        raise ShapeError(f"path has {path.out_dim} channels but the model expects {model.input_dim}")


def cde_field(model: CdeModel, path: ControlPath):
    """The solver-ready integrand (s, z) -> f(z) dX/ds(s)."""
    _check_dims(model, path)

    def field(s, z):
        return model.matrix_field(z) @ path.derivative(s)

    return field


def solver_config_for(path: ControlPath, config: SolveConfig) -> SolveConfig:
    """Attach the path's jump locations.

    Fixed-step solves step on every breakpoint so that knots are grid points;
    dopri5 only needs the derivative discontinuities.
    """
    if config.method in FIXED_METHODS:
        extra = path.breakpoints[1:-1]
    else:
        extra = path.derivative_discontinuities
    return config.with_discontinuities(tuple(config.discontinuities) + tuple(extra.tolist()))


def solve_cde(model: CdeModel, path: ControlPath, config: SolveConfig | None = None,
              queries=None) -> SolveResult:
    """Hidden-state trajectory z at ``queries`` (default: the final parameter)."""
    config = solver_config_for(path, config or SolveConfig())
    z0 = model.zeta(path.evaluate(path.breakpoints[0]))
    return integrate(cde_field(model, path), z0, path.domain, queries, config)


def forward(model: CdeModel, path: ControlPath, config: SolveConfig | None = None,
            output_mode: str = "terminal") -> np.ndarray:
    """Readout of z at the end of the path, or at every breakpoint."""
    if output_mode not in OUTPUT_MODES:
        raise ValueError(f"output_mode must be one of {OUTPUT_MODES}")
    queries = path.breakpoints if output_mode == "sequence" else None
    res = solve_cde(model, path, config, queries)
    out = model.readout(res.states)
    return out if output_mode == "sequence" else out[-1]


# ---------------------------------------------------------------------------
# losses

def loss(outputs, labels, task) -> float:
    value, _ = loss_and_grad(outputs, labels, task)
    return value


def loss_and_grad(outputs, labels, task):
    """Mean loss and its gradient w.r.t. ``outputs``.

    Binary classification uses cross-entropy on logits; regression uses
    squared error.
    """
    outputs = np.asarray(outputs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if labels.shape != outputs.shape:
        if labels.size != outputs.size:
            raise ShapeError(f"labels {labels.shape} do not match outputs {outputs.shape}")
        labels = labels.reshape(outputs.shape)
    n = outputs.size
    if task == "binary_classification":
        # log(1 + e^o) - y o, computed stably
        value = np.mean(np.logaddexp(0.0, outputs) - labels * outputs)
        grad = (_sigmoid(outputs) - labels) / n
    elif task == "regression":
        diff = outputs - labels
        value = np.mean(diff * diff)
        grad = 2.0 * diff / n
    else:
        raise ValueError(f"unknown task {task!r}")
    return float(value), grad


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def metric(outputs, labels, task) -> float:
    """Accuracy for binary classification, RMSE for regression."""
    outputs = np.asarray(outputs, dtype=float).ravel()
    labels = np.asarray(labels, dtype=float).ravel()
    if outputs.size == 0:
        return float("nan")
    if task == "binary_classification":
        return float(np.mean((outputs > 0.0) == (labels > 0.5)))
    return float(np.sqrt(np.mean((outputs - labels) ** 2)))


# ---------------------------------------------------------------------------
# batched unrolled solves

@dataclass
class PathBatch:
    """Paths with identical breakpoints, stacked for vectorised evaluation."""

    breakpoints: np.ndarray
    coeffs: np.ndarray  # (B, m, d, 4)

    @classmethod
    def stack(cls, paths: Sequence[ControlPath]) -> PathBatch:
        bp = paths[0].breakpoints
        for p in paths[1:]:
            if p.breakpoints.shape != bp.shape or not np.array_equal(p.breakpoints, bp):
                raise ShapeError("batched paths must share breakpoints")
        return cls(bp, np.stack([p.coeffs for p in paths]))

    def __len__(self):
        return self.coeffs.shape[0]

    def start(self):
        return self.coeffs[:, 0, :, 0]

    def derivative(self, s):
        k = int(np.clip(np.searchsorted(self.breakpoints, s, side="right") - 1,
                        0, self.coeffs.shape[1] - 1))
        u = s - self.breakpoints[k]
        c = self.coeffs[:, k]
        return c[..., 1] + u * (2.0 * c[..., 2] + u * 3.0 * c[..., 3])


def _stage_times(method, s, h, at_jump):
    end = float(np.nextafter(s + h, s)) if at_jump else s + h
    if method == "euler":
        return [s]
    return [s, s + 0.5 * h, s + 0.5 * h, end]


class _Tape:
    """Forward sweep of a fixed-step solve that remembers what the backward sweep needs."""

    def __init__(self, model: CdeModel, batch: PathBatch, config: SolveConfig, record=True):
        if config.method not in FIXED_METHODS:
            raise UnsupportedForTraining(
                f"gradients are only available for fixed-step methods, not {config.method!r}")
        self.model = model
        self.method = config.method
        span = (float(batch.breakpoints[0]), float(batch.breakpoints[-1]))
        disc = tuple(config.discontinuities) + tuple(batch.breakpoints[1:-1].tolist())
        self.grid, self.ends_on_jump = fixed_step_grid(span, config.fixed_step, disc)
        self.record = record
        self.nfe = 0

        x0 = batch.start()
        z, self.zeta_cache = model.zeta.forward(x0)
        states = [z]
        self.steps = []
        for k in range(len(self.grid) - 1):
            s, h = self.grid[k], self.grid[k + 1] - self.grid[k]
            z, rec = self._step(batch, s, h, z, self.ends_on_jump[k])
            if not np.all(np.isfinite(z)):
                raise NumericalBlowup("non-finite state in unrolled solve")
            states.append(z)
            if record:
                self.steps.append(rec)
        self.states = np.stack(states)  # (len(grid), B, w)

    def _eval(self, batch, s, z):
        self.nfe += 1
        dX = batch.derivative(s)
        flat, cache = self.model.field_net.forward(z)
        M = flat.reshape(z.shape[0], self.model.hidden_size, self.model.input_dim)
        F = np.einsum("bwv,bv->bw", M, dX)
        return F, (dX, cache)

    def _step(self, batch, s, h, z, at_jump):
        times = _stage_times(self.method, s, h, at_jump)
        if self.method == "euler":
            F, rec = self._eval(batch, times[0], z)
            return z + h * F, [rec]
        k1, r1 = self._eval(batch, times[0], z)
        k2, r2 = self._eval(batch, times[1], z + 0.5 * h * k1)
        k3, r3 = self._eval(batch, times[2], z + 0.5 * h * k2)
        k4, r4 = self._eval(batch, times[3], z + h * k3)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), [r1, r2, r3, r4]

    def _field_vjp(self, rec, gF, grads):
        dX, cache = rec
        gM = gF[:, :, None] * dX[:, None, :]
        gz, gW, gb = self.model.field_net.backward(cache, gM.reshape(gM.shape[0], -1))
        for k in range(len(gW)):
            grads[f"field.{k}.weight"] += gW[k]
            grads[f"field.{k}.bias"] += gb[k]
        return gz

    def backward(self, grad_states, grads):
        """Propagate cotangents on grid states back to z0 and the parameters."""
        g = grad_states[-1].copy()
        for k in range(len(self.grid) - 2, -1, -1):
            h = self.grid[k + 1] - self.grid[k]
            recs = self.steps[k]
            if self.method == "euler":
                g = g + self._field_vjp(recs[0], h * g, grads)
            else:
                gk = [h / 6.0 * g, h / 3.0 * g, h / 3.0 * g, h / 6.0 * g]
                gz = g.copy()
                gin = self._field_vjp(recs[3], gk[3], grads)
                gz += gin
                gk[2] = gk[2] + h * gin
                gin = self._field_vjp(recs[2], gk[2], grads)
                gz += gin
                gk[1] = gk[1] + 0.5 * h * gin
                gin = self._field_vjp(recs[1], gk[1], grads)
                gz += gin
                gk[0] = gk[0] + 0.5 * h * gin
                gz += self._field_vjp(recs[0], gk[0], grads)
                g = gz
            g = g + grad_states[k]
        _, gW, gb = self.model.zeta.backward(self.zeta_cache, g)
        for k in range(len(gW)):
            grads[f"zeta.{k}.weight"] += gW[k]
            grads[f"zeta.{k}.bias"] += gb[k]


def _as_batch(paths):
    if isinstance(paths, ControlPath):
        return PathBatch.stack([paths]), True
    if isinstance(paths, PathBatch):
        return paths, False
    return PathBatch.stack(list(paths)), False


def _output_indices(tape, batch, output_mode):
    if output_mode == "terminal":
        return np.array([len(tape.grid) - 1])
    return np.searchsorted(tape.grid, batch.breakpoints)


def predict(model, paths, config: SolveConfig, output_mode="terminal"):
    """Outputs of a batch of same-breakpoint paths under a fixed-step solve.

    Shape (B, out) for terminal mode, (B, m+1, out) for sequence mode. A
    single path drops the batch axis.
    """
    batch, single = _as_batch(paths)
    for p in [batch]:
        if p.coeffs.shape[2] != model.input_dim:
            raise ShapeError("path channel count does not match the model")
    tape = _Tape(model, batch, config, record=False)
    idx = _output_indices(tape, batch, output_mode)
    z = np.swapaxes(tape.states[idx], 0, 1)  # (B, K, w)
    out = model.readout(z)
    if output_mode == "terminal":
        out = out[:, 0]
    return (out[0] if single else out), tape.nfe


def backward_fixed_step(model: CdeModel, paths, config: SolveConfig, labels,
                        task="binary_classification", output_mode="terminal"):
    """Loss and exact gradients of the discretised model for every parameter.

    Returns ``(loss, grads)`` with ``grads`` keyed like :meth:`CdeModel.parameters`.
    The loss is averaged over every output of every path in the batch.
    """
    batch, single = _as_batch(paths)
    if batch.coeffs.shape[2] != model.input_dim:
        raise ShapeError("path channel count does not match the model")
    tape = _Tape(model, batch, config, record=True)
    idx = _output_indices(tape, batch, output_mode)
    z = np.swapaxes(tape.states[idx], 0, 1)  # (B, K, w)
    out, rcache = model.readout.forward(z)
    if output_mode == "terminal":
        outputs = out[:, 0]
    else:
        outputs = out
    if single:
        labels = np.asarray(labels, dtype=float).reshape((1,) + outputs.shape[1:])
    value, g_out = loss_and_grad(outputs, labels, task)
    if output_mode == "terminal":
        g_out = g_out[:, None]

    grads = {k: np.zeros_like(v) for k, v in model.parameters().items()}
    gz, gW, gb = model.readout.backward(rcache, g_out)
    for k in range(len(gW)):
        grads[f"readout.{k}.weight"] += gW[k]
        grads[f"readout.{k}.bias"] += gb[k]
    grad_states = np.zeros_like(tape.states)
    np.add.at(grad_states, idx, np.swapaxes(gz, 0, 1))
    tape.backward(grad_states, grads)
    return value, grads


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr=5e-4, beta1=0.9, beta2=0.999,
              eps=1e-8):
    """One bias-corrected Adam update. Returns new (params, state); inputs are untouched."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalBlowup(f"non-finite gradient for {k}")
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state.m.get(k, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(k, 0.0) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(t, m_new, v_new)


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1024
    max_epochs: int = 1000
    plateau_patience: int = 15
    termination_patience: int = 60
    lr_factor: float = 0.1
    stagnation_threshold: float = 1e-6
    task: str = "binary_classification"
    output_mode: str = "terminal"
    scheme: str = "hermite_backward"
    seed: int = 0

    def __post_init__(self):
        if self.plateau_patience < 1 or self.termination_patience < 1:
            raise ValueError("patiences must be positive")
        if self.plateau_patience >= self.termination_patience:
            raise ValueError("plateau_patience must be smaller than termination_patience")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.output_mode not in OUTPUT_MODES:
            raise ValueError(f"output_mode must be one of {OUTPUT_MODES}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


class PlateauSchedule:
    """Learning-rate drop after a stalled stretch of epochs, then early stop.

    An epoch is stagnant unless the monitored loss beats the best so far by
    at least ``threshold``. After ``plateau_patience`` stagnant epochs (counted
    since the last improvement or drop) the rate is multiplied by
    ``factor``; after ``termination_patience`` stagnant epochs since the last
    improvement training stops.
    """

    def __init__(self, lr, plateau_patience=15, termination_patience=60, factor=0.1,
                 threshold=1e-6):
        self.lr = lr
        self.plateau_patience = plateau_patience
        self.termination_patience = termination_patience
        self.factor = factor
        self.threshold = threshold
        self.best = math.inf
        self.stale = 0
        self.since_drop = 0

    def update(self, monitored: float) -> str:
        """Feed one epoch's loss; returns ``"continue"``, ``"reduce"`` or ``"stop"``."""
        if monitored < self.best - self.threshold:
            self.best = monitored
            self.stale = 0
            self.since_drop = 0
            return "continue"
        self.stale += 1
        self.since_drop += 1
        if self.stale >= self.termination_patience:
            return "stop"
        if self.since_drop >= self.plateau_patience:
            self.lr *= self.factor
            self.since_drop = 0
            return "reduce"
        return "continue"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    metric: float
    nfe: int
    lr: float


@dataclass
class TrainResult:
    model: CdeModel
    log: list
    best_epoch: int
    stopped_early: bool
    lr_reductions: list = field(default_factory=list)


def group_by_breakpoints(paths: Sequence[ControlPath]) -> list[np.ndarray]:
    """Index groups of paths that can share a batch."""
    groups = {}
    for i, p in enumerate(paths):
        groups.setdefault(p.breakpoints.tobytes(), []).append(i)
    return [np.array(v) for _, v in sorted(groups.items(), key=lambda kv: kv[1][0])]


def _batches(paths, batch_size, rng=None):
    out = []
    for group in group_by_breakpoints(paths):
        if rng is not None:
            group = group[rng.permutation(len(group))]
        for start in range(0, len(group), batch_size):
            out.append(group[start:start + batch_size])
    if rng is not None:
        out = [out[i] for i in rng.permutation(len(out))]
    return out


def _train_epoch(model, paths, labels, config: TrainConfig, solver: SolveConfig, state, lr, rng):
    """One pass over the training paths. Returns (model, state, mean loss, nfe)."""
    total, count, nfe = 0.0, 0, 0
    for idx in _batches(paths, config.batch_size, rng):
        batch = PathBatch.stack([paths[i] for i in idx])
        value, grads = backward_fixed_step(model, batch, solver, labels[idx], config.task,
                                           config.output_mode)
        # each batched field call counts once
        nfe += _steps_evals(batch, solver)
        params, state = adam_step(model.parameters(), grads, state, lr, config.beta1,
                                  config.beta2, config.eps)
        model = model.with_parameters(params)
        total += value * len(idx)
        count += len(idx)
    return model, state, total / max(count, 1), nfe


def _steps_evals(batch, solver):
    grid, _ = fixed_step_grid((batch.breakpoints[0], batch.breakpoints[-1]), solver.fixed_step,
                              tuple(solver.discontinuities) + tuple(batch.breakpoints[1:-1]))
    return (len(grid) - 1) * (1 if solver.method == "euler" else 4)


def _evaluate(model, paths, labels, config: TrainConfig, solver: SolveConfig):
    """(loss, metric, nfe) of the model on a set of paths."""
    if not paths:
        return float("nan"), float("nan"), 0
    outputs = [None] * len(paths)
    nfe = 0
    for idx in _batches(paths, max(config.batch_size, 1)):
        out, used = predict(model, [paths[i] for i in idx], solver, config.output_mode)
        nfe += used
        for j, i in enumerate(idx):
            outputs[i] = out[j]
    outputs = np.stack(outputs)
    value = loss(outputs, np.asarray(labels, dtype=float).reshape(outputs.shape), config.task)
    return value, metric(outputs, labels, config.task), nfe


def evaluate(model, dataset_split, config: TrainConfig, solver: SolveConfig):
    """Loss and metric on ``(samples, labels)`` from :meth:`Dataset.subset`."""
    samples, labels = dataset_split
    paths = [build(config.scheme, s) for s in samples]
    value, score, _ = _evaluate(model, paths, labels, config, solver)
    return value, score


def train(dataset, model: CdeModel, config: TrainConfig | None = None,
          solver: SolveConfig | None = None) -> TrainResult:
    """Adam training with the plateau schedule and best-validation rollback.

    The learning rate drops tenfold after ``plateau_patience`` epochs without
    training-loss improvement; training stops after ``termination_patience``
    such epochs and the parameters with the lowest validation loss are
    restored.
    """
    config = config or TrainConfig()
    solver = solver or SolveConfig(method="rk4")
    if solver.method not in FIXED_METHODS:
        raise UnsupportedForTraining("training uses fixed-step solves (euler or rk4)")
    rng = np.random.default_rng(config.seed)
    train_samples, train_labels = dataset.subset("train")
    val_samples, val_labels = dataset.subset("val")
    train_paths = [build(config.scheme, s) for s in train_samples]
    val_paths = [build(config.scheme, s) for s in val_samples]
    if not train_paths:
        from .errors import EmptySplit
        raise EmptySplit("training needs a non-empty train split")

    schedule = PlateauSchedule(config.learning_rate, config.plateau_patience,
                               config.termination_patience, config.lr_factor,
                               config.stagnation_threshold)
    state = AdamState()
    log = []
    best_val, best_params, best_epoch = math.inf, model.parameters(), 0
    reductions = []
    stopped = False
    nfe_total = 0
    for epoch in range(1, config.max_epochs + 1):
        lr = schedule.lr
        model, state, train_loss, nfe = _train_epoch(model, train_paths, np.asarray(train_labels),
                                                     config, solver, state, lr, rng)
        val_loss, score, val_nfe = _evaluate(model, val_paths, val_labels, config, solver)
        nfe_total += nfe + val_nfe
        log.append(EpochRecord(epoch, train_loss, val_loss, score, nfe_total, lr))
        monitored_val = val_loss if np.isfinite(val_loss) else train_loss
        if monitored_val < best_val:
            best_val, best_params, best_epoch = monitored_val, model.parameters(), epoch
        logger.info("epoch %d train %.6g val %.6g metric %.4g lr %.3g", epoch, train_loss,
                    val_loss, score, lr)
        action = schedule.update(train_loss)
        if action == "reduce":
            reductions.append(epoch)
        elif action == "stop":
            stopped = True
            break
    model = model.with_parameters(best_params)
    return TrainResult(model, log, best_epoch, stopped, reductions)


# ---------------------------------------------------------------------------
# RNN as a unit-step Euler discretisation

def rnn_euler_equivalence(h, xs, z0) -> float:
    """Compare a recurrence with unit-step Euler on dz/ds = h(z, X(s)) - z.

    ``xs`` holds inputs x_0..x_n on unit-spaced knots; X is piecewise
    constant on them. Returns the largest difference between the two state
    sequences z_0..z_n.
    """
    xs = np.asarray(xs, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    n = xs.shape[0] - 1
    recurrent = [z0]
    for i in range(n):
        recurrent.append(np.asarray(h(recurrent[-1], xs[i]), dtype=float))
    recurrent = np.stack(recurrent)

    def field(s, z):
        return h(z, xs[min(math.floor(s), n)]) - z

    knots = np.arange(n + 1, dtype=float)
    res = integrate(field, z0, (0.0, float(n)), knots,
                    SolveConfig(method="euler", fixed_step=1.0, discontinuities=tuple(knots[1:-1])))
    return float(np.max(np.abs(res.states - recurrent)))


# ---------------------------------------------------------------------------
# persistence

def save_checkpoint(model: CdeModel, path, config: dict | None = None) -> None:
    params = {k: {"shape": list(np.shape(v)), "data": np.ravel(v).tolist()}
              for k, v in sorted(model.parameters().items())}
    doc = {"architecture": model.architecture, "config": config or {}, "parameters": params}
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_checkpoint(path) -> tuple[CdeModel, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    arch = doc["architecture"]
    model = CdeModel.init(arch["input_dim"], arch["hidden_size"], arch["output_dim"],
                          max(arch["hidden_hidden"], 1), arch["num_layers"],
                          hidden_activation=arch.get("hidden_activation", "relu"))
    params = {k: np.array(v["data"], dtype=float).reshape(v["shape"])
              for k, v in doc["parameters"].items()}
    return model.with_parameters(params), doc.get("config", {})


def write_metric_log(log: Sequence[EpochRecord], path) -> None:
    lines = ["epoch,train_loss,val_loss,metric,nfe"]
    for r in log:
        lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.metric!r},{r.nfe}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
