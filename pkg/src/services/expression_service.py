"""
運算式類別服務
Canonical classes of derived strings, the user-facing expression syntax, and
brute-force enumeration of the strings in a class
"""

import itertools
import logging
import math
import re
from collections import Counter
from typing import Dict, Iterator, List, Sequence, Tuple, Union

from src.models.errors import ExpressionSyntaxError, NotInLanguageError, NumericGuardError
from src.models.expression import (
    ExpressionClass,
    LinearClass,
    MonomialKey,
    PolynomialClass,
    RationalClass,
)
from src.models.grammar import FamilyKind, GrammarFamily
from src.services.config_service import EngineConfig

logger = logging.getLogger(__name__)

FACTOR_PATTERN = re.compile(r'x(\d+)(?:\^(\d+))?')


def _tokens(w: Union[str, Sequence[str]]) -> Tuple[str, ...]:
    return tuple(w.split()) if isinstance(w, str) else tuple(w)


def _legend(family: GrammarFamily) -> str:
    """x1=<first variable>, x2=<second variable>, ... in sorted variable order"""
    return 'variables: ' + ', '.join(f'x{i}={name}' for i, name in enumerate(family.variables, start=1))


def weighted_surjections(weights: Sequence[int], length: int) -> int:
    """
    Number of words of the given length over weighted letters using every letter

    Each letter contributes `weight` spellings per occurrence; inclusion-exclusion
    over the letters left out.
    """
    k = len(weights)
    total = 0
    for size in range(k + 1):
        for subset in itertools.combinations(weights, size):
            total += (-1) ** (k - size) * sum(subset) ** length
    return total


class ExpressionService:
    """運算式類別服務"""

    def __init__(self, config=EngineConfig):
        self.config = config

    # ------------------------------------------------------------------
    # strings -> classes

    def canonicalize(self, family: GrammarFamily, w: Union[str, Sequence[str]]) -> ExpressionClass:
        """
        Class of a derived string

        Args:
            family: recognised grammar family
            w: terminal string, as text or token sequence

        Raises:
            NotInLanguageError: w is not a string of the family's grammar
        """
        tokens = _tokens(w)
        if family.kind is FamilyKind.RATIONAL:
            return self._canonicalize_rational(family, tokens)
        if family.kind is FamilyKind.ALT_LINEAR:
            return self._canonicalize_alt_linear(family, tokens)
        terms = self._split_sum(family, tokens, ' '.join(tokens))
        if family.kind is FamilyKind.LINEAR:
            if any(len(term) != 1 for term in terms):
                raise NotInLanguageError(f'not a linear-grammar string: {" ".join(tokens)}')
            return LinearClass(variables=tuple(term[0] for term in terms))
        return PolynomialClass(monomials=tuple(MonomialKey.of(Counter(term)) for term in terms))

    def _variable(self, family: GrammarFamily, token: str, text: str) -> int:
        index = family.variable_index(token)
        if index is None:
            raise NotInLanguageError(f'{token!r} is not a variable of the grammar in: {text} ({_legend(family)})')
        return index

    def _split_sum(self, family: GrammarFamily, tokens: Tuple[str, ...], text: str) -> List[List[int]]:
        """c + c V + c V ...  ->  variable indices of each V"""
        if not tokens or tokens[0] != 'c':
            raise NotInLanguageError(f'string must start with c: {text}')
        terms: List[List[int]] = []
        position = 1
        while position < len(tokens):
            if tokens[position] != '+' or position + 2 >= len(tokens) or tokens[position + 1] != 'c':
                raise NotInLanguageError(f'expected "+ c <variables>" at token {position + 1} of: {text}')
            position += 2
            term = []
            while position < len(tokens) and tokens[position] != '+':
                term.append(self._variable(family, tokens[position], text))
                position += 1
            if not term:
                raise NotInLanguageError(f'term without variables in: {text}')
            terms.append(term)
        return terms

    def _canonicalize_rational(self, family: GrammarFamily, tokens: Tuple[str, ...]) -> RationalClass:
        text = ' '.join(tokens)
        try:
            slash = tokens.index('/')
        except ValueError:
            raise NotInLanguageError(f'rational string needs a top-level "/": {text}') from None
        left, right = tokens[:slash], tokens[slash + 1:]
        for side in (left, right):
            if len(side) < 3 or side[0] != '(' or side[-1] != ')':
                raise NotInLanguageError(f'each side must be parenthesised: {text}')
        polynomial = family.model_copy(update={'kind': FamilyKind.POLYNOMIAL})
        return RationalClass(
            numerator=self.canonicalize(polynomial, left[1:-1]),
            denominator=self.canonicalize(polynomial, right[1:-1]),
        )

    def _canonicalize_alt_linear(self, family: GrammarFamily, tokens: Tuple[str, ...]) -> LinearClass:
        """c x_rk + ... + c x_r1 + c with strictly decreasing indices"""
        text = ' '.join(tokens)
        if not tokens or tokens[-1] != 'c':
            raise NotInLanguageError(f'alt-linear string must end with c: {text}')
        body = tokens[:-1]
        if len(body) % 3:
            raise NotInLanguageError(f'malformed alt-linear string: {text}')
        indices = []
        for start in range(0, len(body), 3):
            constant, variable, plus = body[start:start + 3]
            if constant != 'c' or plus != '+':
                raise NotInLanguageError(f'expected "c <variable> +" at token {start + 1} of: {text}')
            indices.append(self._variable(family, variable, text))
        if any(a <= b for a, b in zip(indices, indices[1:])):
            raise NotInLanguageError(f'variable indices must strictly decrease: {text}')
        return LinearClass(variables=tuple(indices))

    # ------------------------------------------------------------------
    # expression syntax -> classes

    def parse_expression(self, family: GrammarFamily, text: str) -> ExpressionClass:
        """
        Parse `c + c*x1 + ...`, `c + c*x1^2*x2`, or `(POLY)/(POLY)`

        x<I> is the I-th variable of the family.

        Raises:
            ExpressionSyntaxError: malformed text, index outside 1..n, or exponent 0
        """
        compact = re.sub(r'\s+', '', text)
        if not compact:
            raise ExpressionSyntaxError('empty expression')
        if family.kind is FamilyKind.RATIONAL:
            match = re.fullmatch(r'\(([^()]*)\)/\(([^()]*)\)', compact)
            if not match:
                raise ExpressionSyntaxError(f'expected (POLY)/(POLY): {text}')
            return RationalClass(
                numerator=self._parse_polynomial(family, match.group(1), text),
                denominator=self._parse_polynomial(family, match.group(2), text),
            )
        if family.kind is FamilyKind.POLYNOMIAL:
            return self._parse_polynomial(family, compact, text)
        return LinearClass(variables=tuple(
            self._single_variable(factors, text) for factors in self._parse_terms(family, compact, text)
        ))

    def _parse_terms(self, family: GrammarFamily, compact: str, text: str) -> List[Dict[int, int]]:
        terms = compact.split('+')
        if terms.count('c') != 1:
            raise ExpressionSyntaxError(f'expected exactly one constant term "c": {text}')
        parsed = []
        for term in terms:
            if term == 'c':
                continue
            if not term.startswith('c*'):
                raise ExpressionSyntaxError(f'term {term!r} must have the form c*TERM: {text}')
            factors: Dict[int, int] = {}
            for factor in term[2:].split('*'):
                match = FACTOR_PATTERN.fullmatch(factor)
                if not match:
                    raise ExpressionSyntaxError(f'bad factor {factor!r} in: {text}')
                index = int(match.group(1))
                exponent = int(match.group(2)) if match.group(2) is not None else 1
                if not 1 <= index <= family.n:
                    raise ExpressionSyntaxError(f'variable x{index} outside x1..x{family.n}: {text} ({_legend(family)})')
                if exponent == 0:
                    raise ExpressionSyntaxError(f'exponent 0 in factor {factor!r}: {text}')
                if index in factors:
                    raise ExpressionSyntaxError(f'x{index} repeated within one term: {text}')
                factors[index] = exponent
            parsed.append(factors)
        return parsed

    @staticmethod
    def _single_variable(factors: Dict[int, int], text: str) -> int:
        if len(factors) != 1 or next(iter(factors.values())) != 1:
            raise ExpressionSyntaxError(f'linear terms take a single variable, c*xI: {text}')
        return next(iter(factors))

    def _parse_polynomial(self, family: GrammarFamily, compact: str, text: str) -> PolynomialClass:
        return PolynomialClass(monomials=tuple(
            MonomialKey.of(factors) for factors in self._parse_terms(family, compact, text)
        ))

    # ------------------------------------------------------------------
    # rendering

    def class_to_json(self, cls: ExpressionClass):
        return cls.to_json()

    def class_to_expression(self, cls: ExpressionClass) -> str:
        if isinstance(cls, RationalClass):
            return f'({self.class_to_expression(cls.numerator)})/({self.class_to_expression(cls.denominator)})'
        if isinstance(cls, LinearClass):
            terms = [f'c*x{index}' for index in cls.variables]
        else:
            terms = [
                'c*' + '*'.join(f'x{index}' if exponent == 1 else f'x{index}^{exponent}'
                                for index, exponent in monomial.exponents)
                for monomial in cls.monomials
            ]
        return ' + '.join(['c', *terms])

    # ------------------------------------------------------------------
    # brute-force enumeration

    def enumerate_strings(self, family: GrammarFamily, cls: ExpressionClass, max_plus: int) -> List[Tuple[str, float]]:
        """
        Every string of the class using at most max_plus sum steps, with its probability

        Raises:
            NumericGuardError: more than STRING_ENUMERATION_LIMIT strings
        """
        if family.kind is FamilyKind.ALT_LINEAR:
            if max_plus < cls.k:
                raise ValueError(f'max_plus {max_plus} is below the class size {cls.k}')
            return [(self._alt_linear_string(family, cls), self._alt_linear_derivation(family, cls))]
        if family.kind is FamilyKind.RATIONAL:
            numerators = self._enumerate_sum(family, cls.numerator, max_plus)
            denominators = self._enumerate_sum(family, cls.denominator, max_plus)
            self._guard(len(numerators) * len(denominators))
            return [
                (f'( {num} ) / ( {den} )', p_num * p_den)
                for (num, p_num), (den, p_den) in itertools.product(numerators, denominators)
            ]
        return self._enumerate_sum(family, cls, max_plus)

    def _guard(self, count: int):
        if count > self.config.STRING_ENUMERATION_LIMIT:
            raise NumericGuardError(
                f'{count} strings exceed the enumeration limit {self.config.STRING_ENUMERATION_LIMIT}'
            )

    def _enumerate_sum(self, family: GrammarFamily, cls, max_plus: int) -> List[Tuple[str, float]]:
        """Strings c + c T1 + ... + c Tj over the class's terms, j <= max_plus"""
        params = family.params
        p = params.p
        spellings = self._term_spellings(family, cls)
        k = len(spellings)
        if max_plus < k:
            raise ValueError(f'max_plus {max_plus} is below the class size {k}')
        weights = [len(options) for options in spellings]
        self._guard(sum(weighted_surjections(weights, j) for j in range(k, max_plus + 1)) if k else 1)

        results = [('c', 1.0 - p)] if k == 0 else []
        if k == 0:
            return results
        for j in range(k, max_plus + 1):
            base = (1.0 - p) * p ** j
            for assignment in itertools.product(range(k), repeat=j):
                if len(set(assignment)) != k:
                    continue
                for choice in itertools.product(*(spellings[t] for t in assignment)):
                    text = 'c' + ''.join(f' + c {spelling}' for spelling, _ in choice)
                    results.append((text, base * math.prod(weight for _, weight in choice)))
        return results

    def _term_spellings(self, family: GrammarFamily, cls) -> List[List[Tuple[str, float]]]:
        """Per class term, every token spelling with its V-derivation probability"""
        if family.kind is FamilyKind.LINEAR:
            q = family.params.q
            return [[(family.variables[index - 1], q[index - 1])] for index in cls.variables]
        params = family.params
        spellings = []
        for monomial in cls.monomials:
            letters = [index for index, exponent in monomial.exponents for _ in range(exponent)]
            weight = params.q ** (len(letters) - 1) * (1.0 - params.q)
            weight *= math.prod(params.qv[index - 1] for index in letters)
            spellings.append([
                (' '.join(family.variables[index - 1] for index in order), weight)
                for order in sorted(set(itertools.permutations(letters)))
            ])
        return spellings

    def _alt_linear_string(self, family: GrammarFamily, cls: LinearClass) -> str:
        return ''.join(f'c {family.variables[index - 1]} + ' for index in reversed(cls.variables)) + 'c'

    def _alt_linear_derivation(self, family: GrammarFamily, cls: LinearClass) -> float:
        """Walk S -> V1 + c, then V1, V2, ... down to the largest class index"""
        params = family.params
        if not cls.variables:
            return 1.0 - params.p0
        if cls.variables[-1] > family.n:
            raise NotInLanguageError(f'variable index {cls.variables[-1]} outside 1..{family.n}')
        probability = params.p0
        last = cls.variables[-1]
        for i in range(1, last + 1):
            if i == family.n:
                break
            p_i, q_i = params.branch[i - 1]
            if i == last:
                probability *= 1.0 - p_i - q_i
            elif i in cls.variables:
                probability *= p_i
            else:
                probability *= q_i
        return probability

    def iter_classes(self, family: GrammarFamily) -> Iterator[LinearClass]:
        """All 2^n linear classes of an n-variable family"""
        for size in range(family.n + 1):
            for subset in itertools.combinations(range(1, family.n + 1), size):
                yield LinearClass(variables=subset)
