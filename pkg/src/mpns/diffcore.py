"""Small dense MLPs with hand-written reverse-mode gradients and Adam.

Everything is float64. A :class:`ParamSet` keeps all weights and biases of one
network in a single flat array; the per-layer matrices are views into it, so
optimizers and checkpoints work on the flat vector while the forward and
backward passes use the matrix views.

Inputs may be a single vector of shape ``(d,)`` or a batch of row vectors of
shape ``(n, d)``. For a batch, :func:`mlp_backward` sums parameter gradients
over rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

PROB_CLAMP = 1e-7


class ContractError(ValueError):
    """Raised when an argument violates a documented shape or range contract."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ContractError(f"all layer dimensions must be >= 1, got {dims}")
        if self.hidden_activation != "relu":
            raise ContractError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in ("linear", "sigmoid"):
            raise ContractError(f"unsupported output activation {self.output_activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every affine layer, input side first."""
        dims = self.layer_dims
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_shapes)


class ParamSet:
    """Weights and biases of one MLP backed by a single flat float64 array.

    Layer ``i`` owns a weight matrix of shape ``(fan_in, fan_out)`` followed by
    a bias of length ``fan_out``, in input-to-output order.
    """

    def __init__(self, spec: MlpSpec, flat: np.ndarray | None = None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.n_params)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise ContractError(
                f"flat parameter vector has shape {flat.shape}, expected ({spec.n_params},)"
            )
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        offset = 0
        for fan_in, fan_out in spec.layer_shapes:
            self.weights.append(flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            self.biases.append(flat[offset:offset + fan_out])
            offset += fan_out

    def copy(self) -> "ParamSet":
        return ParamSet(self.spec, self.flat.copy())

    def zeros_like(self) -> "ParamSet":
        return ParamSet(self.spec)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.flat, other.flat)

    def __repr__(self):
        return f"ParamSet({self.spec}, n={self.flat.size})"


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    params = ParamSet(spec)
    for w, (fan_in, fan_out) in zip(params.weights, spec.layer_shapes):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return params


@dataclass
class TapeRecord:
    """Intermediates of one forward pass.

    ``activations[0]`` is the (2-D) input, ``activations[i + 1]`` the output of
    layer ``i``; ``pre_activations[i]`` is the affine output of layer ``i``.
    """

    spec: MlpSpec
    params_version: bytes
    squeeze: bool
    activations: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)

    @property
    def input(self) -> np.ndarray:
        return self.activations[0]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


def _fingerprint(params: ParamSet) -> bytes:
    # cheap identity check for stale tapes: shape plus a few sampled entries
    flat = params.flat
    probe = flat[:: max(1, flat.size // 16)]
    return id(flat).to_bytes(8, "little") + probe.tobytes()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mlp_forward(spec: MlpSpec, params: ParamSet, x) -> tuple[np.ndarray, TapeRecord]:
    """Run the network on ``x`` and return ``(output, tape)``."""
    if params.spec != spec:
        raise ContractError("parameter set was built for a different MlpSpec")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ContractError(f"input has shape {x.shape}, expected (..., {spec.input_dim})")
    if not np.all(np.isfinite(x)):
        raise ContractError("input contains non-finite values")

    tape = TapeRecord(spec, _fingerprint(params), squeeze, [x], [])
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        tape.pre_activations.append(z)
        if i < last:
            a = np.maximum(z, 0.0)
        elif spec.output_activation == "sigmoid":
            a = _sigmoid(z)
        else:
            a = z
        tape.activations.append(a)
    out = tape.output
    return (out[0] if squeeze else out), tape


def mlp_backward(spec: MlpSpec, params: ParamSet, tape: TapeRecord,
                 output_grad) -> tuple[ParamSet, np.ndarray]:
    """Backpropagate ``output_grad`` (dL/d output) through a recorded pass.

    Returns parameter gradients (summed over batch rows) and dL/d input with
    the same shape as the forward input.
    """
    if tape.spec != spec or params.spec != spec:
        raise ContractError("tape, params and spec do not belong together")
    if tape.params_version != _fingerprint(params):
        raise ContractError("tape is stale: parameters changed since the forward pass")
    g = np.asarray(output_grad, dtype=np.float64)
    if tape.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.output.shape:
        raise ContractError(f"output_grad has shape {g.shape}, expected {tape.output.shape}")

    grads = params.zeros_like()
    n_layers = len(params.weights)
    if spec.output_activation == "sigmoid":
        y = tape.output
        g = g * y * (1.0 - y)
    for i in range(n_layers - 1, -1, -1):
        a_in = tape.activations[i]
        grads.weights[i][...] = a_in.T @ g
        grads.biases[i][...] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            g = g * (tape.pre_activations[i - 1] > 0)
    input_grad = g[0] if tape.squeeze else g
    return grads, input_grad


def grad_check(spec: MlpSpec, params: ParamSet, loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
               x, eps: float = 1e-5, grad_fn=None) -> float:
    """Compare backprop gradients against central finite differences.

    ``loss`` maps the network output to ``(value, d value / d output)``.
    ``grad_fn`` overrides the analytic gradient (used to inject faults).
    Returns the maximum relative error over all parameters.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")

    out, tape = mlp_forward(spec, params, x)
    value, dout = loss(out)
    if not np.isfinite(value):
        raise ContractError("loss is not finite at the check point")
    if grad_fn is None:
        analytic = mlp_backward(spec, params, tape, dout)[0].flat
    else:
        analytic = np.asarray(grad_fn(params, x), dtype=np.float64)

    probe = params.copy()
    numeric = np.empty_like(probe.flat)
    for k in range(probe.flat.size):
        orig = probe.flat[k]
        probe.flat[k] = orig + eps
        plus = loss(mlp_forward(spec, probe, x)[0])[0]
        probe.flat[k] = orig - eps
        minus = loss(mlp_forward(spec, probe, x)[0])[0]
        probe.flat[k] = orig
        numeric[k] = (plus - minus) / (2 * eps)
    if not np.all(np.isfinite(numeric)):
        raise ContractError("finite-difference loss evaluation produced non-finite values")

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass
class OptimState:
    """Adam moment accumulators for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamSet, **hyper) -> "OptimState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), **hyper)


def adam_step(params: ParamSet, grads: ParamSet | np.ndarray, state: OptimState) -> None:
    """In-place Adam update of ``params`` and ``state``."""
    g = grads.flat if isinstance(grads, ParamSet) else np.asarray(grads, dtype=np.float64)
    if g.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ContractError(
            f"shape mismatch: params {params.flat.shape}, grads {g.shape}, state {state.m.shape}"
        )
    if state.step < 0:
        raise ContractError("optimizer step counter is negative")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    params.flat -= (state.lr / bc1) * state.m / (np.sqrt(state.v / bc2) + state.eps)


def clamp_prob(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)

