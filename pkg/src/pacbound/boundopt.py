"""Stochastic-gradient optimization of a PAC-Bayes error-bound objective.

The randomized classifier is Q = N(w, diag(s)) over network weights, with
per-parameter variances s = exp(2*sigma) and a prior N(w0, lam*I) whose
scale lam = exp(2*rho) is optimized continuously and later rounded onto the
lattice lam_j = c * exp(-j/b) paid for by a union bound.

The objective minimized over (w, sigma, rho) is

    surrogate(w + xi . sqrt(s)) + penalty(B_RE)

where xi is a fresh standard-normal draw each iteration (so the first term
is an unbiased estimate of the stochastic network's surrogate error), and

    B_RE = [ KL(N(w,s) || N(w0, lam I)) + 2*log(b*log(c/lam))
             + log(pi^2 * m / (6*delta)) ] / (m - 1).

Two penalty variants are supported: "quad" uses sqrt(B_RE / 2) (tracks the
square-root form of the inverted bound) and "linear" uses B_RE itself
(tighter when the empirical term is near zero). All penalty gradients are
closed-form; the surrogate gradient flows to sigma through the
reparametrization w' = w + xi * exp(sigma).

Updates use RMSprop (uncentered, decay 0.9) on the stacked vector
[w, sigma, rho].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .klbounds import kl_diag_gaussian
from .nn import MlpArchitecture, surrogate_loss_and_grad
from .rng import BATCH, XI, stream

# Keep b*log(c/lam) a hair above 1 during optimization so the union term's
# double logarithm stays defined with margin; the j=1 lattice point itself
# (b*log(c/lam) = 1 exactly) is still a valid evaluation point.
_J_FLOOR = 1.0001
_SIGMA_INIT_FLOOR = 1e-6


class BoundOptDiverged(FloatingPointError):
    """Objective went non-finite; carries the last finite state."""

    def __init__(self, message: str, state: "BoundOptState"):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class PriorSpec:
    """Prior N(w0, lam*I) plus the lattice/confidence bookkeeping constants."""

    w0: np.ndarray
    m: int
    b: int = 100
    c: float = 0.1
    delta: float = 0.025

    def __post_init__(self):
        w0 = np.ascontiguousarray(self.w0, dtype=np.float64)
        w0.flags.writeable = False
        object.__setattr__(self, "w0", w0)
        if self.m < 2:
            raise ValueError(f"need m >= 2 training examples, got {self.m}")
        if self.b < 1:
            raise ValueError(f"lattice precision b must be >= 1, got {self.b}")
        if not 0.0 < self.c < 1.0:
            raise ValueError(f"lattice upper bound c must lie in (0,1), got {self.c}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")

    @property
    def dim(self) -> int:
        return self.w0.shape[0]

    def lambda_max(self) -> float:
        """Largest admissible prior variance (the j = 1 lattice point)."""
        return self.c * math.exp(-1.0 / self.b)

    def rho_cap(self) -> float:
        """Upper clamp for rho during optimization (keeps j* >= 1.0001)."""
        return 0.5 * (math.log(self.c) - _J_FLOOR / self.b)

    def confidence_floor(self) -> float:
        """log(pi^2 m / (6 delta)), the lam-independent part of B_RE's numerator."""
        return math.log(math.pi**2 * self.m / (6.0 * self.delta))


@dataclass
class GaussianPosterior:
    """Diagonal-Gaussian distribution over flat network weights."""

    arch: MlpArchitecture
    w: np.ndarray
    sigma: np.ndarray  # log standard deviations; variances are exp(2*sigma)

    def __post_init__(self):
        self.w = self.arch.check_weights(self.w)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.sigma.shape != self.w.shape:
            raise ValueError(
                f"sigma shape {self.sigma.shape} does not match weights {self.w.shape}"
            )
        if not np.all(np.isfinite(self.sigma)):
            raise ValueError("sigma must be finite")

    @property
    def variances(self) -> np.ndarray:
        return np.exp(2.0 * self.sigma)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One weight draw w + xi * exp(sigma)."""
        xi = rng.standard_normal(self.w.shape[0])
        return self.w + xi * np.exp(self.sigma)


@dataclass
class BoundOptConfig:
    # (iterations, learning rate) phases, matched to the long-budget recipe.
    schedule: tuple[tuple[int, float], ...] = ((150_000, 1e-3), (50_000, 1e-4))
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    noise_seed: int = 0
    objective: str = "quad"  # "quad" -> sqrt(B_RE/2) penalty, "linear" -> B_RE
    batch_size: int | None = None  # None = full batch each iteration
    samples_per_iter: int = 1
    sigma_init_scale: float = 1.0  # 0.1 for random-label runs
    rho_init: float = -3.0

    def __post_init__(self):
        if not self.schedule:
            raise ValueError("schedule must contain at least one phase")
        for iters, lr in self.schedule:
            if iters < 0 or lr <= 0:
                raise ValueError(f"bad schedule phase ({iters}, {lr})")
        if self.objective not in ("quad", "linear"):
            raise ValueError(f"unknown objective variant {self.objective!r}")
        if not 0.0 <= self.rms_decay < 1.0:
            raise ValueError(f"rms_decay must lie in [0,1), got {self.rms_decay}")
        if self.samples_per_iter < 1:
            raise ValueError("samples_per_iter must be >= 1")

    @property
    def total_iterations(self) -> int:
        return sum(iters for iters, _ in self.schedule)

    def learning_rate(self, iteration: int) -> float:
        seen = 0
        for iters, lr in self.schedule:
            seen += iters
            if iteration < seen:
                return lr
        return self.schedule[-1][1]


@dataclass
class BoundOptState:
    """Optimizer state: stacked parameters [w (d), sigma (d), rho] + RMS accumulator."""

    arch: MlpArchitecture
    params: np.ndarray
    rms: np.ndarray
    iteration: int = 0
    clamp_events: int = 0

    @property
    def dim(self) -> int:
        return (self.params.shape[0] - 1) // 2

    @property
    def w(self) -> np.ndarray:
        return self.params[: self.dim]

    @property
    def sigma(self) -> np.ndarray:
        return self.params[self.dim : 2 * self.dim]

    @property
    def rho(self) -> float:
        return float(self.params[-1])

    def posterior(self) -> GaussianPosterior:
        return GaussianPosterior(self.arch, self.w.copy(), self.sigma.copy())


@dataclass
class StepRecord:
    iteration: int
    objective: float
    surrogate: float
    penalty: float
    b_re: float
    kl: float


def union_and_confidence(lam: float, prior: PriorSpec) -> float:
    """2*log(b*log(c/lam)) + log(pi^2 m / (6 delta)); needs b*log(c/lam) >= 1."""
    j_star = prior.b * math.log(prior.c / lam)
    if j_star < 1.0 - 1e-9:
        raise ValueError(
            f"prior variance {lam} above the admissible lattice range "
            f"(b*log(c/lam) = {j_star:.6f} < 1)"
        )
    return 2.0 * math.log(max(j_star, 1.0)) + prior.confidence_floor()


def b_re_from_kl(kl: float, lam: float, prior: PriorSpec) -> float:
    """Normalized complexity term from a precomputed KL value."""
    if kl < 0:
        raise ValueError(f"KL must be nonnegative, got {kl}")
    return (kl + union_and_confidence(lam, prior)) / (prior.m - 1)


def b_re(w: np.ndarray, sigma: np.ndarray, rho: float, prior: PriorSpec) -> float:
    """Normalized complexity term for posterior (w, exp(2*sigma)) at lam = exp(2*rho)."""
    lam = math.exp(2.0 * rho)
    kl = kl_diag_gaussian(w, np.exp(2.0 * sigma), prior.w0, lam)
    return b_re_from_kl(kl, lam, prior)


def penalty_and_grads(
    w: np.ndarray,
    sigma: np.ndarray,
    rho: float,
    prior: PriorSpec,
    variant: str = "quad",
) -> tuple[float, np.ndarray, np.ndarray, float, float, float]:
    """Bound penalty and its exact partials in (w, sigma, rho).

    Returns (penalty, d/dw, d/dsigma, d/drho, b_re_value, kl_value). The
    KL partials in the reparametrized coordinates are
        dKL/dw      = (w - w0) / lam
        dKL/dsigma_i = s_i / lam - 1
        dKL/drho    = d - (|s|_1 + |w - w0|^2) / lam
    and the union term contributes -4 / log(c/lam) to d/drho.
    """
    s = np.exp(2.0 * sigma)
    lam = math.exp(2.0 * rho)
    diff = w - prior.w0
    d = prior.dim
    sum_s = float(np.sum(s))
    sq = float(diff @ diff)
    kl = 0.5 * (
        sum_s / lam - d + sq / lam + d * math.log(lam) - 2.0 * float(np.sum(sigma))
    )
    bre = (kl + union_and_confidence(lam, prior)) / (prior.m - 1)

    dkl_dw = diff / lam
    dkl_dsigma = s / lam - 1.0
    dkl_drho = d - (sum_s + sq) / lam
    dunion_drho = -4.0 / math.log(prior.c / lam)
    denom = prior.m - 1

    if variant == "quad":
        penalty = math.sqrt(bre / 2.0)
        scale = 1.0 / (4.0 * penalty)  # d/dx sqrt(x/2) = 1/(4 sqrt(x/2))
    elif variant == "linear":
        penalty = bre
        scale = 1.0
    else:
        raise ValueError(f"unknown objective variant {variant!r}")
    return (
        penalty,
        (scale / denom) * dkl_dw,
        (scale / denom) * dkl_dsigma,
        (scale / denom) * (dkl_drho + dunion_drho),
        bre,
        kl,
    )


def objective_value(
    arch: MlpArchitecture,
    w: np.ndarray,
    sigma: np.ndarray,
    rho: float,
    prior: PriorSpec,
    data: LabeledDataset,
    xi: np.ndarray,
    variant: str = "quad",
) -> tuple[float, float, float, float]:
    """Objective at fixed noise xi: (total, surrogate, b_re, kl).

    Used for gradient checking and symmetry tests; the training step
    computes the same quantities alongside the gradients.
    """
    perturbed = w + xi * np.exp(sigma)
    surrogate, _ = surrogate_loss_and_grad(arch, perturbed, data.features, data.labels)
    penalty, _, _, _, bre, kl = penalty_and_grads(w, sigma, rho, prior, variant)
    return surrogate + penalty, surrogate, bre, kl


def objective_grad_step(
    state: BoundOptState,
    data: LabeledDataset,
    prior: PriorSpec,
    cfg: BoundOptConfig,
) -> StepRecord:
    """One stochastic step of the bound objective; mutates `state` in place.

    Samples fresh noise from the (noise_seed, "xi", iteration) stream,
    accumulates the reparametrized surrogate gradient and the closed-form
    penalty gradient, and applies one RMSprop update to the stacked
    parameter vector. rho is clamped to keep the prior scale inside the
    admissible lattice range; clamps are counted on the state.
    """
    d = state.dim
    w = state.params[:d]
    sigma = state.params[d : 2 * d]
    rho = float(state.params[-1])

    if cfg.batch_size is None or cfg.batch_size >= data.m:
        batch_features, batch_labels = data.features, data.labels
    else:
        picks = stream(cfg.noise_seed, BATCH, state.iteration).choice(
            data.m, size=cfg.batch_size, replace=False
        )
        batch_features, batch_labels = data.features[picks], data.labels[picks]

    std = np.exp(sigma)
    rng = stream(cfg.noise_seed, XI, state.iteration)
    grad_w = np.zeros(d)
    grad_sigma = np.zeros(d)
    surrogate_total = 0.0
    for _ in range(cfg.samples_per_iter):
        xi = rng.standard_normal(d)
        loss, g = surrogate_loss_and_grad(
            state.arch, w + xi * std, batch_features, batch_labels
        )
        surrogate_total += loss
        grad_w += g
        grad_sigma += g * xi * std
    inv = 1.0 / cfg.samples_per_iter
    surrogate = surrogate_total * inv
    grad_w *= inv
    grad_sigma *= inv

    penalty, pen_w, pen_sigma, pen_rho, bre, kl = penalty_and_grads(
        w, sigma, rho, prior, cfg.objective
    )
    objective = surrogate + penalty

    grad = np.concatenate([grad_w + pen_w, grad_sigma + pen_sigma, [pen_rho]])
    if not (np.isfinite(objective) and np.isfinite(np.abs(grad).max())):
        raise BoundOptDiverged(
            f"non-finite objective/gradient at iteration {state.iteration}", state
        )

    lr = cfg.learning_rate(state.iteration)
    state.rms *= cfg.rms_decay
    state.rms += (1.0 - cfg.rms_decay) * grad * grad
    state.params -= lr * grad / (np.sqrt(state.rms) + cfg.rms_epsilon)

    rho_cap = prior.rho_cap()
    if state.params[-1] > rho_cap:
        state.params[-1] = rho_cap
        state.clamp_events += 1

    record = StepRecord(
        iteration=state.iteration,
        objective=objective,
        surrogate=surrogate,
        penalty=penalty,
        b_re=bre,
        kl=kl,
    )
    state.iteration += 1
    return record


def initial_state(
    arch: MlpArchitecture,
    w_sgd: np.ndarray,
    prior: PriorSpec,
    cfg: BoundOptConfig,
) -> BoundOptState:
    """Starting point: w at the trained weights, variances |w| (scaled), rho = -3.

    sigma = 0.5 * log(max(scale * |w|, 1e-6)); the floor keeps the log
    defined for parameters trained to (or initialized at) exactly zero.
    """
    w = arch.check_weights(w_sgd)
    if prior.dim != w.shape[0]:
        raise ValueError(
            f"prior dimension {prior.dim} does not match weights {w.shape[0]}"
        )
    s_init = np.maximum(np.abs(w) * cfg.sigma_init_scale, _SIGMA_INIT_FLOOR)
    sigma = 0.5 * np.log(s_init)
    params = np.concatenate([w, sigma, [cfg.rho_init]])
    return BoundOptState(arch=arch, params=params, rms=np.zeros_like(params))


def optimize_bound(
    arch: MlpArchitecture,
    w_sgd: np.ndarray,
    data: LabeledDataset,
    prior: PriorSpec,
    cfg: BoundOptConfig,
    state: BoundOptState | None = None,
    progress=None,
) -> tuple[GaussianPosterior, float, dict[str, np.ndarray]]:
    """Run the full bound optimization; returns (posterior, rho, trace).

    Pass a saved `state` to resume mid-run (iteration count and noise streams
    are counter-based, so a resumed run is bit-identical to an uninterrupted
    one). The trace holds one entry per executed iteration.
    """
    if state is None:
        state = initial_state(arch, w_sgd, prior, cfg)
    total = cfg.total_iterations
    trace = {
        key: []
        for key in ("iteration", "objective", "surrogate", "penalty", "b_re", "kl")
    }
    while state.iteration < total:
        record = objective_grad_step(state, data, prior, cfg)
        trace["iteration"].append(record.iteration)
        trace["objective"].append(record.objective)
        trace["surrogate"].append(record.surrogate)
        trace["penalty"].append(record.penalty)
        trace["b_re"].append(record.b_re)
        trace["kl"].append(record.kl)
        if progress is not None:
            progress(record)
    trace_arrays = {key: np.asarray(values) for key, values in trace.items()}
    trace_arrays["clamp_events"] = np.asarray([state.clamp_events])
    return state.posterior(), state.rho, trace_arrays
