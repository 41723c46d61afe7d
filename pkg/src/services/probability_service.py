"""
運算式機率服務
Exact and epsilon-bounded probabilities of expression classes for the linear,
polynomial, rational and alt-linear grammar families

The linear-family routines work on (p, weights): one weight per class member,
a variable's q for the linear grammar and a monomial's probability for the
polynomial grammar.
"""

import heapq
import itertools
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import gammaln, logsumexp

from src.models.errors import ExpressionSyntaxError, NumericGuardError
from src.models.expression import (
    ApproxReport,
    ExpressionClass,
    IterationStats,
    LinearClass,
    MonomialKey,
    PolynomialClass,
    RationalClass,
)
from src.models.grammar import AltLinearParams, FamilyKind, GrammarFamily, LinearParams, PolyParams
from src.services.config_service import EngineConfig

logger = logging.getLogger(__name__)

# subset sums of this many weights are built as one numpy block
SUBSET_BLOCK_BITS = 20


# ----------------------------------------------------------------------
# multinomial coefficients


def ln_binomial(n: int, r: int) -> float:
    """ln C(n, r); short products summed exactly, long ones via lgamma"""
    if r < 0 or r > n:
        return -math.inf
    r = min(r, n - r)
    if r <= 30:
        return math.fsum(math.log(n - r + i) - math.log(i) for i in range(1, r + 1))
    return math.lgamma(n + 1) - math.lgamma(r + 1) - math.lgamma(n - r + 1)


def multinomial_log(l: Sequence[int]) -> float:
    """
    ln of the multinomial coefficient (l1 + ... + lk)! / (l1! ... lk!)

    Factorised as C(sum; lk) * C(sum - lk; l1..l(k-1)), one ln-binomial per part.
    """
    remaining = sum(l)
    terms = []
    for part in reversed(l):
        terms.append(ln_binomial(remaining, part))
        remaining -= part
    return math.fsum(terms)


def _log_kappa(l: Sequence[int], log_weights: Sequence[float]) -> float:
    return multinomial_log(l) + math.fsum(count * lw for count, lw in zip(l, log_weights))


def _tail_bound(p: float, pq: float, M: int) -> float:
    """Mass of all outer-series terms past M"""
    return (1.0 - p) * pq ** (M + 1) / (1.0 - pq)


def _log_inner_sums(log_weights: Sequence[float], M: int) -> np.ndarray:
    """
    ln of sum over compositions l of i (all parts >= 1) of C(i; l) * prod w^l, for i = 0..M

    Exponential generating functions: i! [x^i] prod_j (e^(w_j x) - 1), convolved
    one weight at a time in log space.
    """
    levels = np.arange(M + 1)
    log_factorials = gammaln(levels + 1)
    table = np.full(M + 1, -np.inf)
    table[0] = 0.0
    for j, lw in enumerate(log_weights, start=1):
        coeff = levels * lw - log_factorials
        updated = np.full(M + 1, -np.inf)
        for s in range(j, M + 1):
            # l runs 1..s-(j-1); previous level holds s - l >= j - 1
            l = np.arange(1, s - j + 2)
            updated[s] = logsumexp(coeff[l] + table[s - l])
        table = updated
    return table + log_factorials


def _mode_point(i: int, weights: Sequence[float], log_weights: Sequence[float]) -> Tuple[int, ...]:
    """
    Composition of i maximising kappa

    Start from floor(i * w / Q), clamp parts to >= 1, repair the sum, then
    climb by unit transfers; the objective is separable concave, so the
    first point with no improving transfer is the global maximum.
    """
    k = len(weights)
    total = sum(weights)
    l = [max(1, math.floor(i * w / total)) for w in weights]

    def up(j):
        return log_weights[j] - math.log(l[j] + 1)

    def down(j):
        return log_weights[j] - math.log(l[j])

    while sum(l) < i:
        best = max(range(k), key=up)
        l[best] += 1
    while sum(l) > i:
        worst = min((j for j in range(k) if l[j] > 1), key=down)
        l[worst] -= 1
    while True:
        b = max(range(k), key=up)
        donors = [j for j in range(k) if l[j] > 1 and j != b]
        if not donors:
            break
        a = min(donors, key=down)
        if up(b) - down(a) <= 1e-15:
            break
        l[a] -= 1
        l[b] += 1
    return tuple(l)


def _compositions(i: int, k: int):
    for cuts in itertools.combinations(range(1, i), k - 1):
        edges = (0, *cuts, i)
        yield tuple(b - a for a, b in zip(edges, edges[1:]))


class ProbabilityService:
    """運算式機率服務"""

    def __init__(self, config=EngineConfig):
        self.config = config

    # ------------------------------------------------------------------
    # helpers

    @staticmethod
    def _class_weights(params: LinearParams, cls: LinearClass) -> List[float]:
        if any(index > params.n for index in cls.variables):
            raise ExpressionSyntaxError(f'class {list(cls.variables)} has an index outside 1..{params.n}')
        return [params.q[index - 1] for index in cls.variables]

    @staticmethod
    def _check_epsilon(epsilon: float):
        if not 0.0 < epsilon < 1.0:
            raise ValueError(f'epsilon must lie in (0, 1), got {epsilon!r}')

    # ------------------------------------------------------------------
    # exact inclusion-exclusion

    def exact_linear(self, params: LinearParams, cls: LinearClass) -> float:
        """
        P([w]) = sum over subsets J of the class of (-1)^(k-|J|) (1-p) / (1 - p * sum_J q)

        The alternating sum loses about 2^k ulps of its largest term. A value
        below that level is logged as a warning; approx_linear has no such loss.

        Raises:
            NumericGuardError: k above EXACT_MAX_K, or a vanishing denominator
        """
        return self._exact_from_weights(params.p, self._class_weights(params, cls))

    def _exact_from_weights(self, p: float, weights: Sequence[float]) -> float:
        k = len(weights)
        if k == 0:
            return 1.0 - p
        if k > self.config.EXACT_MAX_K:
            raise NumericGuardError(
                f'exact inclusion-exclusion over 2^{k} subsets refused (limit k <= {self.config.EXACT_MAX_K})'
            )
        if 1.0 - p * math.fsum(weights) < 1e-300:
            raise NumericGuardError('denominator 1 - p*sum(q) underflows')

        low = list(weights[:SUBSET_BLOCK_BITS])
        high = list(weights[SUBSET_BLOCK_BITS:])
        sums = np.zeros(1)
        sizes = np.zeros(1, dtype=np.int64)
        for weight in low:
            sums = np.concatenate([sums, sums + weight])
            sizes = np.concatenate([sizes, sizes + 1])

        chunks = []
        for size_high in range(len(high) + 1):
            for subset in itertools.combinations(high, size_high):
                shift = math.fsum(subset)
                signs = np.where((k - sizes - size_high) % 2 == 0, 1.0, -1.0)
                terms = signs * (1.0 - p) / (1.0 - p * (sums + shift))
                chunks.append(math.fsum(terms.tolist()))
        value = math.fsum(chunks)
        logger.debug('exact inclusion-exclusion over %d subsets: %r', 2 ** k, value)
        noise = 2 ** k * np.finfo(float).eps * (1.0 - p) / (1.0 - p * math.fsum(weights))
        if value < noise:
            logger.warning(
                'exact value %.3g is below the cancellation noise %.3g of %d alternating terms; use an epsilon instead',
                value, noise, 2 ** k,
            )
        return min(1.0, max(0.0, value))

    # ------------------------------------------------------------------
    # truncated series oracle

    def series_linear(self, params: LinearParams, cls: LinearClass, M: int, method: str = 'convolution') -> Tuple[float, float]:
        """
        Outer series for i = k..M with every inner term, plus the tail bound

        Returns:
            (value, tail_bound); the exact probability lies in [value, value + tail_bound]
        """
        return self._series_from_weights(params.p, self._class_weights(params, cls), M, method)

    def _series_from_weights(self, p: float, weights: Sequence[float], M: int, method: str) -> Tuple[float, float]:
        k = len(weights)
        if k < 1 or M < k:
            raise ValueError(f'series needs M >= k >= 1 (M={M}, k={k})')
        pq = p * math.fsum(weights)
        if pq >= 1.0:
            raise NumericGuardError(f'p*Q = {pq!r} >= 1: the tail cannot be bounded')
        tail = _tail_bound(p, pq, M)
        if any(weight <= 0 for weight in weights):
            return 0.0, tail
        log_weights = [math.log(weight) for weight in weights]

        if method == 'convolution':
            inner = _log_inner_sums(log_weights, M)
            log_terms = [math.log1p(-p) + i * math.log(p) + inner[i] for i in range(k, M + 1)]
        elif method == 'enumerate':
            count = sum(math.comb(i - 1, k - 1) for i in range(k, M + 1))
            if count > self.config.PARTITION_LIMIT:
                raise NumericGuardError(f'{count} partitions exceed the limit {self.config.PARTITION_LIMIT}')
            log_terms = []
            for i in range(k, M + 1):
                kappas = [math.exp(_log_kappa(l, log_weights)) for l in _compositions(i, k)]
                log_terms.append(math.log1p(-p) + i * math.log(p) + math.log(math.fsum(kappas)))
        else:
            raise ValueError(f'unknown series method {method!r}')
        return math.fsum(math.exp(term) for term in log_terms), tail

    # ------------------------------------------------------------------
    # cutoff

    def choose_M(self, params: LinearParams, cls: LinearClass, epsilon: float) -> int:
        """Smallest formula cutoff whose tail is at most epsilon / 2, clamped to k"""
        return self._cutoff(params.p, self._class_weights(params, cls), epsilon)

    def _cutoff(self, p: float, weights: Sequence[float], epsilon: float) -> int:
        self._check_epsilon(epsilon)
        k = len(weights)
        pq = p * math.fsum(weights)
        if pq >= 1.0:
            raise NumericGuardError(f'p*Q = {pq!r} >= 1: the tail cannot be bounded')
        if pq <= 0.0:
            return k
        M = math.floor(math.log((epsilon / 2.0) * (1.0 - pq) / (1.0 - p)) / math.log(pq))
        M = max(k, M)
        while _tail_bound(p, pq, M) > epsilon / 2.0:
            M += 1
        return M

    # ------------------------------------------------------------------
    # pruned approximation

    def approx_linear(self, params: LinearParams, cls: LinearClass, epsilon: float) -> ApproxReport:
        """
        Estimate within epsilon of the exact class probability

        Args:
            params: linear grammar parameters
            cls: class with k >= 1 variables (k = 0 is answered exactly)
            epsilon: absolute error budget in (0, 1)

        Returns:
            ApproxReport with per-iteration included/total counts
        """
        return self._approx_from_weights(params.p, self._class_weights(params, cls), epsilon)

    def _approx_from_weights(self, p: float, weights: Sequence[float], epsilon: float) -> ApproxReport:
        self._check_epsilon(epsilon)
        k = len(weights)
        if k == 0:
            return ApproxReport(estimate=1.0 - p, error_bound=0.0, M=0)
        M = self._cutoff(p, weights, epsilon)
        pq = p * math.fsum(weights)
        tail = _tail_bound(p, pq, M)
        if any(weight <= 0 for weight in weights):
            return ApproxReport(estimate=0.0, error_bound=0.0, M=M)

        log_weights = [math.log(weight) for weight in weights]
        modes = {i: _mode_point(i, weights, log_weights) for i in range(k, M + 1)}
        log_modes = {i: _log_kappa(l, log_weights) for i, l in modes.items()}
        log_mbar = math.log(self.config.MBAR_SAFETY) + max(log_modes.values())
        log_eps_prime = math.log(epsilon) - math.log(2.0 * (M - k + 1))
        logger.debug('approximation: k=%d, M=%d, mbar=%r', k, M, math.exp(log_mbar))

        inner_table = None
        contributions = []
        skipped_bounds = []
        iterations = []
        for i in range(k, M + 1):
            total = math.comb(i - 1, k - 1)
            log_scale = math.log1p(-p) + i * math.log(p)
            log_gamma = log_eps_prime - (log_scale + log_mbar + math.log(total))
            gamma = 1.0 if log_gamma >= 0 else math.exp(log_gamma)
            if gamma >= 1.0:
                may_skip = total
            else:
                may_skip = min(total, math.floor(math.exp(log_gamma + math.log(total))))
            required = total - may_skip

            if required == 0:
                included, inner = 0, 0.0
            elif required >= self.config.FULL_SUM_FRACTION * total:
                included = total
            else:
                picked = self._best_first(modes[i], log_modes[i], log_weights, required, log_mbar)
                if picked is None:
                    logger.warning('term above mbar at i=%d; summing all %d partitions', i, total)
                    included = total
                else:
                    included, inner = required, picked

            if included == total and required > 0:
                if inner_table is None:
                    inner_table = _log_inner_sums(log_weights, M)
                inner = math.exp(inner_table[i])

            contributions.append(math.exp(log_scale) * inner)
            skipped_bounds.append((total - included) * math.exp(log_scale + log_mbar))
            iterations.append(IterationStats(i=i, included=included, total=total, gamma=gamma))
            logger.debug('i=%d: %d of %d partitions, gamma=%r', i, included, total, gamma)

        estimate = min(1.0, max(0.0, math.fsum(contributions)))
        error_bound = min(epsilon, tail + math.fsum(skipped_bounds))
        return ApproxReport(
            estimate=estimate,
            error_bound=error_bound,
            M=M,
            mbar=math.exp(log_mbar),
            iterations=iterations,
        )

    @staticmethod
    def _best_first(start, log_start: float, log_weights, count: int, log_mbar: float) -> Optional[float]:
        """
        Sum of the `count` largest-first kappa terms reached from the mode

        Neighbours move one unit between two parts, keeping every part >= 1.
        Returns None when a term exceeds mbar.
        """
        k = len(start)
        heap = [(-log_start, start)]
        seen = {start}
        values = []
        while heap and len(values) < count:
            negative, l = heapq.heappop(heap)
            if -negative > log_mbar:
                return None
            values.append(math.exp(-negative))
            for a in range(k):
                if l[a] < 2:
                    continue
                for b in range(k):
                    if a == b:
                        continue
                    moved = list(l)
                    moved[a] -= 1
                    moved[b] += 1
                    moved = tuple(moved)
                    if moved in seen:
                        continue
                    seen.add(moved)
                    delta = math.log(l[a]) - math.log(l[b] + 1) + log_weights[b] - log_weights[a]
                    heapq.heappush(heap, (negative - delta, moved))
        return math.fsum(values)

    # ------------------------------------------------------------------
    # polynomial and rational families

    def monomial_probability(self, params: PolyParams, m: MonomialKey) -> float:
        """C(M; m1..mn) q^(M-1) (1-q) q1^m1 ... qn^mn, in log space"""
        if any(index > params.n for index, _ in m.exponents):
            raise ExpressionSyntaxError(f'monomial {m.to_json()} has an index outside 1..{params.n}')
        if any(params.qv[index - 1] <= 0 for index, _ in m.exponents):
            return 0.0
        degree = m.degree
        log_value = (
            multinomial_log([exponent for _, exponent in m.exponents])
            + (degree - 1) * math.log(params.q)
            + math.log1p(-params.q)
            + math.fsum(exponent * math.log(params.qv[index - 1]) for index, exponent in m.exponents)
        )
        return math.exp(log_value)

    def prob_polynomial(self, params: PolyParams, cls: PolynomialClass, epsilon: float = None, mode: str = 'exact') -> Union[float, ApproxReport]:
        """
        Each monomial of the class acts as one variable of a linear grammar
        whose weight is the monomial's probability.
        """
        weights = [self.monomial_probability(params, monomial) for monomial in cls.monomials]
        if mode == 'exact':
            return self._exact_from_weights(params.p, weights)
        if mode == 'approx':
            return self._approx_from_weights(params.p, weights, epsilon)
        raise ValueError(f'unknown mode {mode!r}')

    def prob_rational(self, params: PolyParams, cls: RationalClass, epsilon: float = None, mode: str = 'exact') -> Union[float, ApproxReport]:
        """P([u/v]) = P([u]) * P([v]); each side gets epsilon / 3 in approx mode"""
        if mode == 'exact':
            return self.prob_polynomial(params, cls.numerator) * self.prob_polynomial(params, cls.denominator)
        if mode != 'approx':
            raise ValueError(f'unknown mode {mode!r}')
        self._check_epsilon(epsilon)
        side = epsilon / 3.0
        numerator = self.prob_polynomial(params, cls.numerator, side, 'approx')
        denominator = self.prob_polynomial(params, cls.denominator, side, 'approx')
        return ApproxReport(
            estimate=numerator.estimate * denominator.estimate,
            error_bound=numerator.error_bound + denominator.error_bound,
            M=max(numerator.M, denominator.M),
            mbar=max(numerator.mbar, denominator.mbar),
            components={'num': numerator, 'den': denominator},
        )

    # ------------------------------------------------------------------
    # alt-linear family

    def prob_alt_linear(self, params: AltLinearParams, cls: LinearClass) -> float:
        """
        k = 0: 1 - p0.  Otherwise p0 * prod g(i) for i = 1..max(cls), with
        g(i) = p_i inside the class, q_i outside it, and 1 - p_i - q_i at the
        largest index (1 when that index is n).
        """
        if not cls.variables:
            return 1.0 - params.p0
        largest = cls.variables[-1]
        if largest > params.n:
            raise ExpressionSyntaxError(f'class {list(cls.variables)} has an index outside 1..{params.n}')
        members = set(cls.variables)
        factors = [params.p0]
        for i in range(1, largest + 1):
            if i == params.n:
                factors.append(1.0)
                continue
            p_i, q_i = params.branch[i - 1]
            if i == largest:
                factors.append(1.0 - p_i - q_i)
            elif i in members:
                factors.append(p_i)
            else:
                factors.append(q_i)
        return math.prod(factors)

    # ------------------------------------------------------------------
    # dispatch

    def expression_probability(self, family: GrammarFamily, cls: ExpressionClass, epsilon: float = None) -> Union[float, ApproxReport]:
        """Exact value when epsilon is None, otherwise an ApproxReport"""
        mode = 'exact' if epsilon is None else 'approx'
        if family.kind is FamilyKind.LINEAR:
            if epsilon is None:
                return self.exact_linear(family.params, cls)
            return self.approx_linear(family.params, cls, epsilon)
        if family.kind is FamilyKind.POLYNOMIAL:
            return self.prob_polynomial(family.params, cls, epsilon, mode)
        if family.kind is FamilyKind.RATIONAL:
            return self.prob_rational(family.params, cls, epsilon, mode)
        value = self.prob_alt_linear(family.params, cls)
        if epsilon is None:
            return value
        self._check_epsilon(epsilon)
        return ApproxReport(estimate=value, error_bound=0.0, M=cls.k)

    # ------------------------------------------------------------------
    # counters export

    def terms_frame(self, report: ApproxReport) -> pd.DataFrame:
        """(i, included, total) rows; rational reports add a component column"""
        if report.components:
            frames = [
                self.terms_frame(component).assign(component=name)
                for name, component in report.components.items()
            ]
            return pd.concat(frames, ignore_index=True)
        return pd.DataFrame(
            [(stats.i, stats.included, stats.total) for stats in report.iterations],
            columns=['i', 'included', 'total'],
        )

    def write_terms_csv(self, report: ApproxReport, path) -> Path:
        path = Path(path)
        self.terms_frame(report).to_csv(path, index=False)
        return path
