"""Reference learners: multinomial logistic regression and a one-hidden-layer
perceptron whose first layer can be frozen.

Parameters live in one flat vector. The trailing segment ``head`` is the
output layer, which is the only part a contributor ever shares.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from lazyfilter.errors import ArchitectureMismatch, InvalidInput, NumericalError

PROB_FLOOR = 1e-12
_MAX_LOSS = -np.log(PROB_FLOOR)


class LabeledExample(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class ArchMeta:
    input_dim: int
    class_count: int
    hidden: tuple[int, ...] = ()
    bias: bool = True

    def __post_init__(self):
        if self.input_dim < 1 or self.class_count < 2:
            raise InvalidInput(f"bad architecture {self}")
        if len(self.hidden) > 1:
            raise InvalidInput("at most one hidden layer is supported")

    @property
    def head_width(self) -> int:
        return self.hidden[0] if self.hidden else self.input_dim

    @property
    def body_size(self) -> int:
        if not self.hidden:
            return 0
        return self.input_dim * self.hidden[0] + self.hidden[0]

    @property
    def param_count(self) -> int:
        return self.body_size + (self.head_width + int(self.bias)) * self.class_count


@dataclass(frozen=True, eq=False)
class ModelState:
    """Immutable parameter vector plus the index interval of its head."""

    params: np.ndarray
    arch: ArchMeta
    head_range: tuple[int, int] = field(default=None)

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64)
        if params.ndim != 1 or params.size != self.arch.param_count:
            raise ArchitectureMismatch(
                f"expected {self.arch.param_count} parameters, got shape {params.shape}"
            )
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        if self.head_range is None:
            object.__setattr__(self, "head_range", (self.arch.body_size, self.arch.param_count))
        lo, hi = self.head_range
        if not 0 <= lo < hi <= params.size:
            raise InvalidInput(f"head_range {self.head_range} out of bounds")

    @property
    def head(self) -> np.ndarray:
        lo, hi = self.head_range
        return self.params[lo:hi]

    def with_params(self, params) -> "ModelState":
        return ModelState(params, self.arch, self.head_range)

    def with_head(self, head) -> "ModelState":
        lo, hi = self.head_range
        head = np.asarray(head, dtype=np.float64)
        if head.shape != (hi - lo,):
            raise ArchitectureMismatch(f"head must have length {hi - lo}, got {head.shape}")
        params = self.params.copy()
        params[lo:hi] = head
        return self.with_params(params)

    def same_layout(self, other: "ModelState") -> bool:
        return self.arch == other.arch and self.head_range == other.head_range

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return self.same_layout(other) and np.array_equal(self.params, other.params)

    __hash__ = None


@dataclass(frozen=True)
class TrainConfig:
    local_epochs: int = 5
    learning_rate: float = 0.5
    freeze_body: bool = True
    weight_decay: float = 0.0

    def __post_init__(self):
        if int(self.local_epochs) != self.local_epochs or self.local_epochs < 1:
            raise InvalidInput("local_epochs must be a positive integer")
        if not self.learning_rate >= 0:
            raise InvalidInput("learning_rate must be non-negative")
        if not self.weight_decay >= 0:
            raise InvalidInput("weight_decay must be non-negative")


def linear_model(input_dim: int, class_count: int, bias: bool = True) -> ModelState:
    """All-zero multinomial logistic regression; the head is the whole model."""
    arch = ArchMeta(input_dim, class_count, bias=bias)
    return ModelState(np.zeros(arch.param_count), arch)


def mlp_model(input_dim: int, class_count: int, hidden: int, rng: np.random.Generator,
              bias: bool = True) -> ModelState:
    arch = ArchMeta(input_dim, class_count, (hidden,), bias)
    params = np.zeros(arch.param_count)
    params[: input_dim * hidden] = rng.normal(0.0, 1.0 / np.sqrt(input_dim), input_dim * hidden)
    return ModelState(params, arch)


def as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    """Accept a Dataset-like object (``.X``/``.y``), one example, or a sequence of examples."""
    if hasattr(data, "X") and hasattr(data, "y"):
        X, y = data.X, data.y
    elif isinstance(data, LabeledExample):
        X, y = np.atleast_2d(data.features), np.array([data.label])
    elif isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray) and np.ndim(data[0]) == 2:
        X, y = data
    else:
        data = list(data)
        if not data:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        X = np.stack([np.asarray(e.features, dtype=np.float64) for e in data])
        y = np.array([int(e.label) for e in data])
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)


def _unpack(model: ModelState):
    a = model.arch
    p = model.params
    if a.hidden:
        h = a.hidden[0]
        W1 = p[: a.input_dim * h].reshape(a.input_dim, h)
        b1 = p[a.input_dim * h : a.body_size]
        rest = p[a.body_size :]
    else:
        W1 = b1 = None
        rest = p
    W = rest[: a.head_width * a.class_count].reshape(a.head_width, a.class_count)
    b = rest[a.head_width * a.class_count :] if a.bias else 0.0
    return W1, b1, W, b


def _check(model: ModelState, X: np.ndarray, y: np.ndarray):
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise ArchitectureMismatch(
            f"features have dimension {X.shape[1:]}, model expects {model.arch.input_dim}"
        )
    if y.size and (y.min() < 0 or y.max() >= model.arch.class_count):
        raise InvalidInput("label outside [0, class_count)")


def _forward(model: ModelState, X: np.ndarray):
    W1, b1, W, b = _unpack(model)
    H = X if W1 is None else np.tanh(X @ W1 + b1)
    logits = H @ W + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return H, log_probs


def per_example_losses(model: ModelState, data) -> np.ndarray:
    X, y = as_arrays(data)
    if len(y) == 0:
        return np.zeros(0)
    _check(model, X, y)
    _, log_probs = _forward(model, X)
    # clamping p at PROB_FLOOR caps each loss at -log(PROB_FLOOR)
    return np.minimum(-log_probs[np.arange(len(y)), y], _MAX_LOSS)


def loss(model: ModelState, example) -> float:
    """Cross-entropy of a single example."""
    return float(per_example_losses(model, example)[0])


def empirical_risk(model: ModelState, data) -> float:
    losses = per_example_losses(model, data)
    if losses.size == 0:
        raise InvalidInput("empirical risk of an empty dataset")
    return float(losses.mean())


def predict(model: ModelState, data) -> np.ndarray:
    X, _ = as_arrays(data)
    _check(model, X, np.zeros(0, dtype=np.int64))
    _, log_probs = _forward(model, X)
    return log_probs.argmax(axis=1)


def risk_gradient(model: ModelState, data, head_only: bool = False) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. the flat parameter vector.

    The probability floor is ignored here; it only matters once a loss is
    already ~27.6 nats.
    """
    X, y = as_arrays(data)
    _check(model, X, y)
    n = len(y)
    if n == 0:
        raise InvalidInput("gradient of an empty dataset")
    W1, b1, W, _ = _unpack(model)
    H, log_probs = _forward(model, X)
    g_logits = np.exp(log_probs)
    g_logits[np.arange(n), y] -= 1.0
    g_logits /= n
    g_head = (H.T @ g_logits).ravel()
    if model.arch.bias:
        g_head = np.concatenate([g_head, g_logits.sum(axis=0)])
    if W1 is None or head_only:
        out = np.zeros(model.params.size)
        out[model.arch.body_size :] = g_head
        return out
    g_H = (g_logits @ W.T) * (1.0 - H**2)
    g_body = np.concatenate([(X.T @ g_H).ravel(), g_H.sum(axis=0)])
    return np.concatenate([g_body, g_head])


def _head_mask(model: ModelState) -> np.ndarray:
    mask = np.zeros(model.params.size, dtype=bool)
    lo, hi = model.head_range
    mask[lo:hi] = True
    return mask


def train(model: ModelState, data, cfg: TrainConfig, rng: np.random.Generator | None = None) -> ModelState:
    """Full-batch gradient descent for ``cfg.local_epochs`` passes.

    Each epoch is a single step on the whole batch, so ``rng`` is accepted
    for interface symmetry but never consumed.
    """
    X, y = as_arrays(data)
    if len(y) == 0:
        raise InvalidInput("cannot train on an empty dataset")
    _check(model, X, y)
    mask = _head_mask(model) if cfg.freeze_body else np.ones(model.params.size, dtype=bool)
    params = model.params.copy()
    current = model
    for _ in range(cfg.local_epochs):
        grad = risk_gradient(current, (X, y), head_only=cfg.freeze_body)
        if cfg.weight_decay:
            grad = grad + cfg.weight_decay * params
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient during training")
        params[mask] -= cfg.learning_rate * grad[mask]
        current = model.with_params(params)
    return current


@dataclass(frozen=True)
class FitResult:
    model: ModelState
    converged: bool
    iterations: int
    grad_norm: float


def fit(
    model: ModelState,
    data,
    weight_decay: float = 0.0,
    tol: float = 1e-6,
    max_iter: int = 10_000,
) -> FitResult:
    """Minimise ``risk + weight_decay/2 * ||params||^2`` to gradient norm ``tol``.

    Used wherever "train to convergence" is needed (warm-up model, exact
    influence retraining). L-BFGS stands in for plain descent because it
    reaches the same minimiser of this convex objective far sooner.
    """
    X, y = as_arrays(data)
    if len(y) == 0:
        raise InvalidInput("cannot fit an empty dataset")
    _check(model, X, y)

    def objective(theta):
        m = model.with_params(theta)
        value = empirical_risk(m, (X, y)) + 0.5 * weight_decay * theta @ theta
        grad = risk_gradient(m, (X, y)) + weight_decay * theta
        return value, grad

    theta_size = model.params.size
    res = minimize(
        objective,
        model.params.copy(),
        jac=True,
        method="L-BFGS-B",
        # gtol bounds the max-abs component; scale it so the 2-norm lands under tol
        options={"maxiter": max_iter, "gtol": tol / np.sqrt(theta_size), "ftol": 0.0, "maxcor": 20},
    )
    if not np.all(np.isfinite(res.x)):
        raise NumericalError("non-finite parameters after fit")
    fitted = model.with_params(res.x)
    _, g = objective(res.x)
    gnorm = float(np.linalg.norm(g))
    return FitResult(fitted, gnorm < tol, int(res.nit), gnorm)


def head_delta(before: ModelState, after: ModelState) -> np.ndarray:
    if not before.same_layout(after):
        raise ArchitectureMismatch("head_delta between different architectures")
    return after.head - before.head


def apply_head_delta(model: ModelState, delta) -> ModelState:
    return model.with_head(model.head + np.asarray(delta, dtype=np.float64))
