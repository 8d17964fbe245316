"""Final bound certification and reporting.

The optimized prior scale is rounded onto the union-bound lattice, the
stochastic network's empirical error is estimated by Monte Carlo and lifted
to a high-confidence upper bound, and the certified error bound comes out of
two nested KL inversions:

    e_bar = kl_inverse(e_mc, log(2/delta') / n)      # MC -> empirical error
    bound = kl_inverse(e_bar, B_RE)                  # empirical -> true error

The result holds with probability 1 - delta - delta'. When the bound
saturates at 1 the report flags it vacuous and quotes sqrt(B_RE / 2)
instead, which remains informative as a divergence scale.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .boundopt import GaussianPosterior, PriorSpec, b_re_from_kl
from .data import LabeledDataset
from .klbounds import kl_diag_gaussian, kl_inverse, sample_convergence_bound
from .nn import zero_one_error
from .rng import MC, stream


@dataclass
class BoundReport:
    """One experiment row: errors, divergence terms, certified bound, accounting."""

    name: str
    arch: tuple[int, ...]
    train_error: float
    test_error: float | None
    snn_train_error_mc: float
    snn_train_error_bound: float
    snn_test_error_mc: float | None
    snn_test_error_bound: float | None
    kl_divergence: float
    b_re: float
    half_b_re_sqrt: float
    pac_bayes_bound: float
    reported_value: float
    vacuous: bool
    lambda_index: int
    lambda_value: float
    mc_samples: int
    delta: float
    delta_prime: float
    total_confidence: float
    train_size: int
    mc_seed: int
    config_digest: str = ""
    deviations: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        payload = dataclasses.asdict(self)
        payload["arch"] = list(self.arch)
        payload["deviations"] = list(self.deviations)
        return payload


def round_lambda(rho: float, b: int, c: float) -> tuple[tuple[int, float], tuple[int, float]]:
    """Nearest lattice points c*exp(-j/b) below and above lam = exp(2*rho).

    Returns ((j_down, lam_down), (j_up, lam_up)) with j >= 1; both candidates
    coincide when lam already sits on the lattice.
    """
    lam = math.exp(2.0 * rho)
    if not lam < c:
        raise ValueError(f"prior variance {lam} must be below c = {c}")
    j_star = b * math.log(c / lam)
    if abs(j_star - round(j_star)) < 1e-9:  # already on the lattice, up to ulps
        j_star = float(round(j_star))
    j_down = max(1, math.floor(j_star))
    j_up = max(1, math.ceil(j_star))
    return (
        (j_down, c * math.exp(-j_down / b)),
        (j_up, c * math.exp(-j_up / b)),
    )


def mc_snn_error(
    posterior: GaussianPosterior,
    data: LabeledDataset,
    n: int,
    seed: int,
    label: str = MC,
) -> float:
    """Monte Carlo estimate of the stochastic network's 0-1 error.

    Averages `zero_one_error` over n weight draws, one posterior sample per
    draw, streamed (draw i comes from the (seed, label, i) stream, so the
    estimate is reproducible and could be sharded without changing draws).
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    total = 0.0
    for i in range(n):
        w_i = posterior.sample(stream(seed, label, i))
        total += zero_one_error(posterior.arch, w_i, data.features, data.labels)
    return total / n


def final_bound(e_mc: float, n: int, delta_prime: float, b_re_value: float) -> float:
    """Certified error bound from an MC error estimate and a B_RE value."""
    if b_re_value < 0:
        raise ValueError(f"B_RE must be nonnegative, got {b_re_value}")
    e_bar = sample_convergence_bound(e_mc, n, delta_prime)
    return kl_inverse(e_bar, b_re_value)


def mahalanobis_pvalue(
    w_ref: np.ndarray,
    mean: np.ndarray,
    sigma: np.ndarray,
    n: int,
    seed: int,
) -> float:
    """Fraction of diagonal-Gaussian draws closer to the mean than `w_ref`.

    Distance is Mahalanobis under diag(exp(2*sigma)); a draw's distance is a
    chi-square variable, so this estimates the chi-square CDF at the
    reference point's distance.
    """
    w_ref = np.asarray(w_ref, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if w_ref.shape != mean.shape or mean.shape != sigma.shape:
        raise ValueError("w_ref, mean, and sigma must share a shape")
    d = mean.shape[0]
    ref_distance = float(np.sum(((w_ref - mean) * np.exp(-sigma)) ** 2))
    below = 0
    for i in range(n):
        xi = stream(seed, "pvalue", i).standard_normal(d)
        if float(xi @ xi) < ref_distance:
            below += 1
    return below / n


def snn_pvalue(
    w_sgd: np.ndarray,
    posterior: GaussianPosterior,
    n: int = 10_000,
    seed: int = 0,
) -> float:
    """How extreme the pretrained weights are under the optimized posterior.

    Returns the estimated probability that a posterior draw lies closer to
    the posterior mean (in posterior-covariance distance) than `w_sgd` does;
    0 means every sampled perturbation was more extreme than the overall
    drift of the mean away from the pretrained weights.
    """
    w_sgd = posterior.arch.check_weights(w_sgd)
    return mahalanobis_pvalue(w_sgd, posterior.w, posterior.sigma, n, seed)


def certify(
    name: str,
    posterior: GaussianPosterior,
    rho: float,
    prior: PriorSpec,
    train: LabeledDataset,
    w_sgd: np.ndarray,
    test: LabeledDataset | None = None,
    n: int = 150_000,
    delta_prime: float = 0.01,
    mc_seed: int = 0,
    config_digest: str = "",
    deviations: tuple[str, ...] = (),
) -> BoundReport:
    """Assemble the full certificate for one experiment.

    Both lattice roundings of the prior scale are evaluated end-to-end and
    the smaller final bound is kept. The Monte Carlo error estimate does not
    depend on the prior scale, so it is computed once; the KL and B_RE terms
    are recomputed per candidate.
    """
    if prior.m != train.m:
        raise ValueError(
            f"prior was built for m = {prior.m} but train set has {train.m} rows"
        )
    arch = posterior.arch
    variances = posterior.variances

    e_mc_train = mc_snn_error(posterior, train, n, mc_seed, label="mc-train")
    e_bar_train = sample_convergence_bound(e_mc_train, n, delta_prime)

    best = None
    for j, lam in round_lambda(rho, prior.b, prior.c):
        kl = kl_diag_gaussian(posterior.w, variances, prior.w0, lam)
        bre = b_re_from_kl(kl, lam, prior)
        bound = kl_inverse(e_bar_train, bre)
        candidate = (bound, j, lam, kl, bre)
        if best is None or candidate[0] < best[0]:
            best = candidate
    bound, j, lam, kl, bre = best

    snn_test_mc = snn_test_bound = None
    test_error = None
    if test is not None:
        snn_test_mc = mc_snn_error(posterior, test, n, mc_seed, label="mc-test")
        snn_test_bound = sample_convergence_bound(snn_test_mc, n, delta_prime)
        test_error = zero_one_error(arch, w_sgd, test.features, test.labels)

    half_b_re_sqrt = math.sqrt(bre / 2.0)
    vacuous = bound >= 1.0 - 1e-9
    return BoundReport(
        name=name,
        arch=arch.layer_widths,
        train_error=zero_one_error(arch, w_sgd, train.features, train.labels),
        test_error=test_error,
        snn_train_error_mc=e_mc_train,
        snn_train_error_bound=e_bar_train,
        snn_test_error_mc=snn_test_mc,
        snn_test_error_bound=snn_test_bound,
        kl_divergence=kl,
        b_re=bre,
        half_b_re_sqrt=half_b_re_sqrt,
        pac_bayes_bound=bound,
        reported_value=half_b_re_sqrt if vacuous else bound,
        vacuous=vacuous,
        lambda_index=j,
        lambda_value=lam,
        mc_samples=n,
        delta=prior.delta,
        delta_prime=delta_prime,
        total_confidence=1.0 - prior.delta - delta_prime,
        train_size=train.m,
        mc_seed=mc_seed,
        config_digest=config_digest,
        deviations=tuple(deviations),
    )
