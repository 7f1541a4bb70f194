"""Closed-form analysis of search survival under uniform churn.

The chain estimates, for a system of n identifiers: the probability p that a
uniformly chosen neighbor is a usable routing candidate for a uniformly chosen
hop, its online version p' = p(1-q), the probability (1-p')^b that none of b
uniformly chosen backup neighbors can rescue a hop, the expected path length
1/p_f until such a total failure, the expected online population (1-q)n, and
the smallest backup budget whose failure-free path expectation covers a target
path length.
"""

from __future__ import annotations

import math

import numpy as np


def candidate_probability(n: int) -> float:
    """Average of (t - x)/(n - x + 1) over x in [0, n], t in [x, n], times 1/n^2.

    Evaluated exactly; the inner sum over t collapses to (n - x)/2, which
    matches the literal double loop to 1e-12 and converges to 1/4 for large n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.arange(0, n + 1, dtype=float)
    inner = (n - x) / 2.0
    return float(inner.sum() / (n * n))


def candidate_probability_quadratic(n: int) -> float:
    """Literal double-sum evaluation, kept as the oracle for the reduced form."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = 0.0
    for x in range(0, n + 1):
        denom = n - x + 1
        for t in range(x, n + 1):
            total += (t - x) / denom
    return total / (n * n)


def effective_probability(p: float, q: float) -> float:
    """Candidate probability discounted by the uniform online probability."""
    if not 0.0 <= p <= 1.0 or not 0.0 <= q <= 1.0:
        raise ValueError("p and q must be probabilities")
    return p * (1.0 - q)


def failure_probability(p_effective: float, b: int) -> float:
    """Probability that none of b uniformly chosen backups is usable."""
    if not 0.0 <= p_effective <= 1.0:
        raise ValueError("p' must be a probability")
    if b < 0:
        raise ValueError("b must be >= 0")
    return (1.0 - p_effective) ** b


def expected_failure_path(p_f: float) -> float:
    """Expected number of hops until a non-recoverable failure."""
    if not 0.0 < p_f <= 1.0:
        raise ValueError("p_f must be in (0, 1]")
    return 1.0 / p_f


def expected_online(n: int, q: float) -> float:
    """Expected online population under the uniform model."""
    if n < 0 or not 0.0 <= q <= 1.0:
        raise ValueError("invalid population or failure probability")
    return (1.0 - q) * n


def estimate_search_path_bound(online_count: int) -> int:
    """Ceiling of log2 of the online population."""
    if online_count < 1:
        raise ValueError("online count must be >= 1")
    return math.ceil(math.log2(online_count))


def estimate_backup_size(n: int, q: float, target_e_f: float) -> int:
    """Smallest b whose expected failure-free path reaches ``target_e_f``."""
    if q >= 1.0:
        raise ValueError("no online candidates possible")
    if target_e_f <= 0:
        raise ValueError("target path length must be positive")
    p_eff = effective_probability(candidate_probability(n), q)
    b = 0
    while True:
        e_f = expected_failure_path(failure_probability(p_eff, b))
        if e_f >= target_e_f:
            return b
        b += 1
        if b > 10_000_000:
            raise ArithmeticError("backup size search did not converge")


def analysis_chain(n: int, q: float, b: int | None = None, target_e_f: float | None = None) -> dict:
    """Full chain as a dictionary, for the ``analyze`` CLI subcommand."""
    p = candidate_probability(n)
    p_eff = effective_probability(p, q)
    out: dict = {
        "n": n,
        "q": q,
        "candidate_probability": p,
        "effective_probability": p_eff,
        "expected_online": expected_online(n, q),
    }
    online = expected_online(n, q)
    if online >= 1:
        out["search_path_bound"] = estimate_search_path_bound(int(online))
    if b is not None:
        p_f = failure_probability(p_eff, b)
        out["b"] = b
        out["failure_probability"] = p_f
        out["expected_failure_path"] = expected_failure_path(p_f)
    if target_e_f is not None:
        out["target_expected_failure_path"] = target_e_f
        out["estimated_backup_size"] = estimate_backup_size(n, q, target_e_f)
    return out
