"""KL-divergence arithmetic used by the bound pipeline.

Everything here works in nats. The central primitive is `kl_inverse`,
the largest p in [0,1] with KL(q || p) <= c for Bernoulli distributions;
it turns KL-form concentration inequalities into explicit error bounds.
"""

from __future__ import annotations

import math

import numpy as np

# Upper cap for inverse computations; KL(q || p) has a pole at p = 1, so the
# returned bound saturates at 1 - 1e-12 (indistinguishable from 1 for any
# reported quantity, and keeps KL(q, result) finite).
_P_CAP = 1.0 - 1e-12
_NEWTON_MAX_ITERS = 200
_NEWTON_STEP_TOL = 1e-15


def kl_bernoulli(q: float, p: float) -> float:
    """KL(Bernoulli(q) || Bernoulli(p)) in nats, with 0*log(0) = 0.

    p in {0, 1} is allowed only when q matches; otherwise the divergence
    is +inf (no error is raised).
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0,1], got {q}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0,1], got {p}")
    if q == 0.0:
        head = 0.0
    elif p == 0.0:
        return math.inf
    else:
        head = q * math.log(q / p)
    if q == 1.0:
        tail = 0.0
    elif p == 1.0:
        return math.inf
    else:
        tail = (1.0 - q) * math.log((1.0 - q) / (1.0 - p))
    return head + tail


def kl_diag_gaussian(
    w: np.ndarray, s: np.ndarray, w0: np.ndarray, lam: float
) -> float:
    """KL( N(w, diag(s)) || N(w0, lam*I) ) in closed form.

    Equals 0.5 * (|s|_1/lam - d + |w - w0|_2^2/lam + d*log(lam) - sum(log s)).
    """
    w = np.asarray(w, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    w0 = np.asarray(w0, dtype=np.float64)
    if w.shape != s.shape or w.shape != w0.shape or w.ndim != 1:
        raise ValueError(
            f"shape mismatch: w {w.shape}, s {s.shape}, w0 {w0.shape}"
        )
    if not np.all(s > 0.0):
        raise ValueError("posterior variances must be strictly positive")
    if not lam > 0.0:
        raise ValueError(f"prior variance must be positive, got {lam}")
    d = w.shape[0]
    diff = w - w0
    return 0.5 * float(
        np.sum(s) / lam
        - d
        + diff @ diff / lam
        + d * math.log(lam)
        - np.sum(np.log(s))
    )


def pinsker_inverse_upper(q: float, c: float) -> float:
    """Closed-form upper bound on the KL inverse: min(1, q + sqrt(c/2))."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0,1], got {q}")
    if c < 0.0:
        raise ValueError(f"c must be nonnegative, got {c}")
    return min(1.0, q + math.sqrt(c / 2.0))


def kl_inverse(q: float, c: float, steps: int = 5) -> float:
    """Largest p with KL(q || p) <= c, by safeguarded Newton iteration.

    Newton runs on h(p) = KL(q || p) - c with h'(p) = (1-q)/(1-p) - q/p,
    starting from the closed-form bound q + sqrt(c/2) (clipped below 1).
    The start always sits at or above the root, and h is convex and
    increasing there, so the iterates decrease monotonically onto the root.
    At least `steps` updates are applied; iteration then continues until the
    update stalls, since a start clipped near 1 can be far from the root.
    Iterates are clamped to [q, 1 - 1e-12], and the converged iterate is
    rounded down by ulps until KL(q, result) <= c holds exactly, so the
    result is always a feasible point within a few ulps of the supremum.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0,1], got {q}")
    if not (c >= 0.0 and math.isfinite(c)):
        raise ValueError(f"c must be finite and nonnegative, got {c}")
    if q >= 1.0:
        return 1.0
    if c == 0.0:
        return q
    p = q + math.sqrt(c / 2.0)
    if p >= _P_CAP:
        p = _P_CAP
        if kl_bernoulli(q, p) <= c:
            return p
    for iteration in range(_NEWTON_MAX_ITERS):
        h = kl_bernoulli(q, p) - c
        dh = (1.0 - q) / (1.0 - p) - q / p
        if dh <= 0.0:
            break
        p_next = p - h / dh
        p_next = min(max(p_next, q), _P_CAP)
        moved = abs(p_next - p)
        p = p_next
        if iteration + 1 >= steps and moved <= _NEWTON_STEP_TOL:
            break
    # Newton approaches from above; step down over the last few ulps so the
    # returned point is feasible even where KL is steep (p near 1).
    for _ in range(100):
        if kl_bernoulli(q, p) <= c:
            break
        p = math.nextafter(p, q)
    return p


def sample_convergence_bound(mean: float, n: int, delta_prime: float) -> float:
    """(1 - delta_prime) upper confidence bound on a Bernoulli mean.

    Inverts the KL-form Chernoff bound KL(observed mean || p) <= log(2/d')/n,
    valid for the average of n i.i.d. {0,1} draws.
    """
    if not 0.0 <= mean <= 1.0:
        raise ValueError(f"mean must lie in [0,1], got {mean}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 < delta_prime < 1.0:
        raise ValueError(f"delta_prime must lie in (0,1), got {delta_prime}")
    return kl_inverse(mean, math.log(2.0 / delta_prime) / n)


class SymmetryError(ValueError):
    """The reference distribution is not invariant under a listed map."""


def _discrete_kl(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * np.log(a / b)))


def symmetrization_kl_identity(
    q_probs: np.ndarray,
    p_probs: np.ndarray,
    permutations: list[np.ndarray],
) -> tuple[float, float, float]:
    """KLs for a distribution averaged over a set of support permutations.

    With Qs the average of Q pushed forward through each permutation, returns
    (KL(Qs||P), KL(Q||P), KL(Q||Qs)). When the permutations form a group and
    P is invariant under each of them, these satisfy
    KL(Qs||P) = KL(Q||P) - KL(Q||Qs), so symmetrizing never increases the
    divergence from P.

    All probabilities must be strictly positive. Each permutation sigma is an
    index array mapping support point i to sigma[i]; P must satisfy
    P(sigma(i)) = P(i) for every listed sigma, else SymmetryError is raised.
    """
    q = np.asarray(q_probs, dtype=np.float64)
    p = np.asarray(p_probs, dtype=np.float64)
    if q.shape != p.shape or q.ndim != 1 or q.shape[0] == 0:
        raise ValueError(f"bad support shapes: q {q.shape}, p {p.shape}")
    if not (np.all(q > 0.0) and np.all(p > 0.0)):
        raise ValueError("all probabilities must be strictly positive")
    for name, dist in (("q_probs", q), ("p_probs", p)):
        if abs(dist.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} sums to {dist.sum()}, expected 1")
    if not permutations:
        raise ValueError("need at least one permutation")

    n = q.shape[0]
    identity = np.arange(n)
    q_sym = np.zeros(n)
    pushed = np.empty(n)
    for sigma in permutations:
        sigma = np.asarray(sigma, dtype=np.intp)
        if not np.array_equal(np.sort(sigma), identity):
            raise ValueError(f"not a permutation of range({n}): {sigma}")
        pushed[sigma] = p
        if not np.allclose(pushed, p, rtol=0.0, atol=1e-12):
            raise SymmetryError(
                "reference distribution is not invariant under a listed "
                "permutation"
            )
        q_sym[sigma] += q
    q_sym /= len(permutations)

    return _discrete_kl(q_sym, p), _discrete_kl(q, p), _discrete_kl(q, q_sym)
