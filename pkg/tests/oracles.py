"""Independent reference computations used by the test suite.

Everything here is written from first principles (exact rational sums,
exhaustive enumeration of trial outcomes) and shares no code with the
package beyond its public types.
"""
import itertools
from fractions import Fraction
from math import comb

import numpy as np


def init_sums(eps, N):
    """Phase-error parity of 2N qubits as explicit binomial sums, in exact arithmetic."""
    e = Fraction(eps)
    odd = sum(e ** (2 * n - 1) * (1 - e) ** (2 * N - 2 * n + 1) * comb(2 * N, 2 * n - 1) for n in range(1, N + 1))
    even = sum(e ** (2 * n) * (1 - e) ** (2 * N - 2 * n) * comb(2 * N, 2 * n) for n in range(0, N + 1))
    return (0.0, float(odd), float(even), 0.0)


def depolarizing_sums(state, eps, N):
    """N-1 gates, each moving weight eps/3 to every other Bell state; binomial expansion."""
    g = -Fraction(4) * Fraction(eps) / 3
    s = sum(g**n * comb(N - 1, n) for n in range(1, N))
    out = []
    for x in state:
        x = Fraction(x)
        out.append(float(x + (x - Fraction(1, 4)) * s))
    return tuple(out)


def readout_sums(state, eps, N):
    """Wrong swap-outcome bits from 2(N-1) measurements; binomial expansion."""
    partner = [1, 0, 3, 2]
    h = -2 * Fraction(eps)
    s_two = sum(h**n * comb(2 * (N - 1), n) for n in range(1, 2 * (N - 1) + 1))
    s_one = sum(h**n * comb(N - 1, n) for n in range(1, N))
    xs = [Fraction(x) for x in state]
    out = []
    for i, x in enumerate(xs):
        y = xs[partner[i]]
        out.append(float(x + (x + y - Fraction(1, 2)) / 2 * s_two + (x - y) / 2 * s_one))
    return tuple(out)


def readout_enumeration(state, eps, N):
    """Sum over every error pattern of the 2(N-1) measurements: bit-type and phase-type flips."""
    bit = [2, 3, 0, 1]
    phase = [3, 2, 1, 0]
    K = N - 1
    out = np.zeros(4)
    v = np.asarray(state, dtype=float)
    for errors in itertools.product((0, 1), repeat=2 * K):
        n_err = sum(errors)
        weight = eps**n_err * (1 - eps) ** (2 * K - n_err)
        w = v.copy()
        if sum(errors[:K]) % 2:
            w = w[bit]
        if sum(errors[K:]) % 2:
            w = w[phase]
        out += weight * w
    return out


def trial_patterns(M):
    return itertools.product((0, 1), repeat=M)


def pattern_probability(pattern, p):
    k = sum(pattern)
    return p**k * (1 - p) ** (len(pattern) - k)


def trailing_after(pattern, kth):
    """Trials after the k-th last success (None if fewer successes)."""
    seen = 0
    for back, bit in enumerate(reversed(pattern)):
        if bit:
            seen += 1
            if seen == kth:
                return back
    return None


def session_success_enumeration(p, M, N):
    """Probability that every one of N links has at least one success, by enumerating all trial patterns."""
    total = 0.0
    for outcome in itertools.product((0, 1), repeat=N * M):
        links = [outcome[i * M:(i + 1) * M] for i in range(N)]
        if all(any(link) for link in links):
            total += pattern_probability(outcome, p)
    return total


def multiplicity_enumeration(N, M):
    counts = [0] * (N * (M - 1) + 1)
    for ms in itertools.product(range(M), repeat=N):
        counts[sum(ms)] += 1
    return counts


def conditional_pmf(M, p, accept, value, support):
    """pmf of value(pattern) over patterns with accept(pattern), normalized."""
    w = {m: 0.0 for m in support}
    for pat in trial_patterns(M):
        if accept(pat):
            w[value(pat)] += pattern_probability(pat, p)
    total = sum(w.values())
    return np.array([w[m] / total for m in support])


def random_bell(rng, size=None):
    return rng.dirichlet(np.ones(4), size=size)
