"""Fully connected ReLU networks on flat parameter vectors.

A network is described by an `MlpArchitecture` (layer widths, ReLU at every
hidden node, identity at the single output) and a flat float64 parameter
vector. The flattening order is fixed and part of the contract:

    [W_0.ravel(order="C"), b_0, W_1.ravel(order="C"), b_1, ...]

where layer l maps width[l] inputs to width[l+1] outputs, W_l has shape
(width[l], width[l+1]) and b_l has shape (width[l+1],). Checkpoints and
gradients all use this layout.

Losses: the 0-1 classification error with sign(0) counted as +1, and the
scaled logistic surrogate log(1 + exp(-yhat*y)) / log(2), which upper-bounds
the 0-1 loss. Gradients are exact analytic backpropagation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import INIT, stream

LOG2 = math.log(2.0)


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced non-finite values."""


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths [input, hidden..., 1] of a ReLU net with linear output."""

    layer_widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(n) for n in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError(
                f"need at least one hidden layer: got widths {widths}"
            )
        if any(n <= 0 for n in widths):
            raise ValueError(f"layer widths must be positive: got {widths}")
        if widths[-1] != 1:
            raise ValueError(f"output width must be 1: got {widths[-1]}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def depth(self) -> int:
        """Number of weight layers (one hidden layer -> depth 2)."""
        return len(self.layer_widths) - 1

    @property
    def param_count(self) -> int:
        widths = self.layer_widths
        return sum((widths[i] + 1) * widths[i + 1] for i in range(self.depth))

    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = self.layer_widths
        return [(widths[i], widths[i + 1]) for i in range(self.depth)]

    def unpack(self, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split a flat vector into [(W_0, b_0), ...]; returns views."""
        w = self.check_weights(w)
        layers = []
        offset = 0
        for n_in, n_out in self.layer_shapes():
            size = n_in * n_out
            weight = w[offset : offset + size].reshape(n_in, n_out)
            offset += size
            bias = w[offset : offset + n_out]
            offset += n_out
            layers.append((weight, bias))
        return layers

    def pack(self, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        parts = []
        for (n_in, n_out), (weight, bias) in zip(self.layer_shapes(), layers):
            if weight.shape != (n_in, n_out) or bias.shape != (n_out,):
                raise ValueError(
                    f"layer shape mismatch: expected {(n_in, n_out)}, "
                    f"got {weight.shape} / {bias.shape}"
                )
            parts.append(np.asarray(weight, dtype=np.float64).ravel())
            parts.append(np.asarray(bias, dtype=np.float64))
        return np.concatenate(parts)

    def check_weights(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != self.param_count:
            raise ValueError(
                f"weight vector has length {w.shape}, architecture "
                f"{self.layer_widths} needs {self.param_count}"
            )
        return w


def parse_arch(spec: str) -> MlpArchitecture:
    """Parse a comma-separated width list such as '784,600,1'."""
    try:
        widths = tuple(int(part) for part in spec.split(","))
    except ValueError as exc:
        raise ValueError(f"bad architecture spec {spec!r}") from exc
    return MlpArchitecture(widths)


def _check_features(arch: MlpArchitecture, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != arch.input_dim:
        raise ValueError(
            f"features have shape {features.shape}, expected "
            f"(m, {arch.input_dim})"
        )
    if features.shape[0] == 0:
        raise ValueError("empty dataset")
    return features


def _forward_pass(arch, w, features):
    """Run the net; returns (activations per layer, hidden masks, outputs)."""
    layers = arch.unpack(w)
    inputs = [features]
    masks = []
    a = features
    for l, (weight, bias) in enumerate(layers):
        z = a @ weight + bias
        if l < arch.depth - 1:
            mask = z > 0.0
            a = np.where(mask, z, 0.0)
            masks.append(mask)
            inputs.append(a)
        else:
            a = z
    return inputs, masks, a[:, 0]


def raw_outputs(arch: MlpArchitecture, w: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Pre-sign real outputs for a batch of feature rows."""
    features = _check_features(arch, features)
    _, _, out = _forward_pass(arch, w, features)
    return out


def forward(arch: MlpArchitecture, w: np.ndarray, x: np.ndarray) -> float:
    """Pre-sign real output for a single feature vector; class is sign(out)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != arch.input_dim:
        raise ValueError(
            f"input has shape {x.shape}, expected ({arch.input_dim},)"
        )
    return float(raw_outputs(arch, w, x[None, :])[0])


def _check_labels(labels: np.ndarray, m: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (m,):
        raise ValueError(f"labels have shape {labels.shape}, expected ({m},)")
    return labels


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    expt = np.exp(t[~pos])
    out[~pos] = expt / (1.0 + expt)
    return out


def surrogate_error(arch, w, features, labels) -> float:
    """Mean scaled logistic loss, log(1+exp(-yhat*y)) / log 2.

    Stable for large |yhat| via log1p; equals 1 exactly at yhat = 0 and
    upper-bounds `zero_one_error` pointwise.
    """
    features = _check_features(arch, features)
    labels = _check_labels(labels, features.shape[0])
    yhat = raw_outputs(arch, w, features)
    margins = yhat * labels
    losses = np.logaddexp(0.0, -margins) / LOG2
    return float(np.sum(losses) / losses.shape[0])


def zero_one_error(arch, w, features, labels) -> float:
    """Fraction of misclassified examples; sign(0) counts as +1."""
    features = _check_features(arch, features)
    labels = _check_labels(labels, features.shape[0])
    yhat = raw_outputs(arch, w, features)
    preds = np.where(yhat >= 0.0, 1.0, -1.0)
    return float(np.count_nonzero(preds != labels) / labels.shape[0])


def surrogate_loss_and_grad(arch, w, features, labels) -> tuple[float, np.ndarray]:
    """Surrogate loss and its exact gradient in the flat layout."""
    features = _check_features(arch, features)
    m = features.shape[0]
    labels = _check_labels(labels, m)
    inputs, masks, yhat = _forward_pass(arch, w, features)
    if not np.all(np.isfinite(yhat)):
        raise NonFiniteError(
            "forward pass produced non-finite outputs "
            f"(max |w| = {np.max(np.abs(w)):.3e})"
        )
    margins = yhat * labels
    loss = float(np.sum(np.logaddexp(0.0, -margins) / LOG2) / m)

    layers = arch.unpack(w)
    # d loss / d yhat for the mean loss
    delta = (-labels * _sigmoid(-margins)) / (LOG2 * m)
    delta = delta[:, None]
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * arch.depth
    for l in range(arch.depth - 1, -1, -1):
        weight, _ = layers[l]
        grads[l] = (inputs[l].T @ delta, delta.sum(axis=0))
        if l > 0:
            delta = (delta @ weight.T) * masks[l - 1]
    return loss, arch.pack(grads)


def grad_surrogate(arch, w, features, labels) -> np.ndarray:
    """Gradient of `surrogate_error` with respect to w (backpropagation)."""
    _, grad = surrogate_loss_and_grad(arch, w, features, labels)
    return grad


def init_weights(arch: MlpArchitecture, sigma: float, seed: int) -> np.ndarray:
    """Random initial weights: truncated normal weights, constant biases.

    Weights are drawn i.i.d. normal(0, sigma^2) and redrawn until they land
    in [-2*sigma, 2*sigma]. First-layer biases are 0.1, all other biases 0.
    Deterministic given the seed.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    rng = stream(seed, INIT)
    bound = 2.0 * sigma
    layers = []
    for l, (n_in, n_out) in enumerate(arch.layer_shapes()):
        weight = rng.normal(0.0, sigma, size=(n_in, n_out))
        out_of_range = np.abs(weight) > bound
        while np.any(out_of_range):
            weight[out_of_range] = rng.normal(0.0, sigma, size=int(out_of_range.sum()))
            out_of_range = np.abs(weight) > bound
        bias_value = 0.1 if l == 0 else 0.0
        bias = np.full(n_out, bias_value)
        layers.append((weight, bias))
    return arch.pack(layers)


def permute_hidden_units(
    arch: MlpArchitecture, w: np.ndarray, hidden_layer: int, perm: np.ndarray
) -> np.ndarray:
    """Reindex the units of one hidden layer (a function-preserving symmetry).

    `hidden_layer` is 0-based among hidden layers; columns of the incoming
    weight matrix, the matching biases, and rows of the outgoing weight
    matrix are permuted together, so the computed function is unchanged.
    """
    if not 0 <= hidden_layer < arch.depth - 1:
        raise ValueError(f"no hidden layer {hidden_layer} in {arch.layer_widths}")
    perm = np.asarray(perm)
    width = arch.layer_widths[hidden_layer + 1]
    if sorted(perm.tolist()) != list(range(width)):
        raise ValueError(f"perm is not a permutation of range({width})")
    layers = [(weight.copy(), bias.copy()) for weight, bias in arch.unpack(w)]
    w_in, b_in = layers[hidden_layer]
    w_out, b_out = layers[hidden_layer + 1]
    layers[hidden_layer] = (w_in[:, perm], b_in[perm])
    layers[hidden_layer + 1] = (w_out[perm, :], b_out)
    return arch.pack(layers)
