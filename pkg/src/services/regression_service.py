"""
符號迴歸示範服務
Generate-and-test search: sample strings, number their constants, fit them by
least squares and rank the candidates
"""

import csv
import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from src.models.errors import DatasetError, PcfgError, TemplateError
from src.models.grammar import FamilyKind, Pcfg
from src.models.regression import Candidate, Dataset, Template, TemplateTerm
from src.services.config_service import EngineConfig
from src.services.derivation_service import DerivationService
from src.services.expression_service import ExpressionService
from src.services.grammar_service import GrammarService
from src.services.probability_service import ProbabilityService

logger = logging.getLogger(__name__)

CONSTANT_PATTERN = re.compile(r'c(\d+)')
POWER_PATTERN = re.compile(r'(.+?)(?:\^(\d+))?')

# above this class size the ranking prior is approximated
EXACT_PRIOR_MAX_K = 12
PRIOR_EPSILON = 1e-6
RANK_TOLERANCE = 1e-10


class RegressionService:
    """符號迴歸示範服務"""

    def __init__(self, config=EngineConfig):
        self.config = config
        self.grammar_service = GrammarService(config)
        self.derivation_service = DerivationService(config)
        self.expression_service = ExpressionService(config)
        self.probability_service = ProbabilityService(config)

    # ------------------------------------------------------------------
    # data

    def load_dataset(self, path) -> Dataset:
        """
        Read a CSV with header x1,...,xn,y

        Raises:
            DatasetError: missing file, bad header, no rows or non-numeric values
        """
        path = Path(path)
        if not path.exists():
            raise DatasetError(f'dataset {path} not found')
        try:
            frame = pd.read_csv(path, sep=',', quoting=csv.QUOTE_NONE)
        except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
            raise DatasetError(f'cannot read dataset {path}: {e}') from e

        columns = [str(column).strip() for column in frame.columns]
        expected = [f'x{i}' for i in range(1, len(columns))] + ['y']
        if columns != expected:
            raise DatasetError(f'header must be {",".join(expected)}, got {",".join(columns)}')
        if frame.empty:
            raise DatasetError(f'dataset {path} has no rows')
        try:
            values = frame.apply(pd.to_numeric, errors='raise').to_numpy(dtype=float)
        except (ValueError, TypeError) as e:
            raise DatasetError(f'non-numeric value in {path}: {e}') from e
        logger.debug('loaded %d rows with %d variables from %s', len(values), len(columns) - 1, path)
        return Dataset.from_rows(values, variables=columns[:-1])

    # ------------------------------------------------------------------
    # templates

    def postprocess_constants(self, w: str) -> Tuple[str, int]:
        """Replace the i-th 'c' token by c<i>, left to right"""
        tokens = w.split()
        m = 0
        for position, token in enumerate(tokens):
            if token == 'c':
                m += 1
                tokens[position] = f'c{m}'
        return ' '.join(tokens), m

    def parse_template(self, template: str) -> Template:
        """
        Split a template into summands linear in the constants

        Raises:
            TemplateError: a summand multiplies constants, or the denominator has one
        """
        tokens = template.split()
        numerator, denominator = tokens, []
        if '/' in tokens:
            slash = tokens.index('/')
            numerator, denominator = tokens[:slash], tokens[slash + 1:]
            numerator = self._strip_parentheses(numerator, template)
            denominator = self._strip_parentheses(denominator, template)
        elif '(' in tokens or ')' in tokens:
            numerator = self._strip_parentheses(tokens, template)

        terms = self._parse_sum(numerator, template)
        below = self._parse_sum(denominator, template) if denominator else []
        if any(term.constant is not None for term in below):
            raise TemplateError(f'constants in the denominator are not linear: {template}')
        indices = {term.constant for term in terms if term.constant is not None}
        return Template(text=template, terms=tuple(terms), denominator=tuple(below), constants=max(indices, default=0))

    @staticmethod
    def _strip_parentheses(tokens: List[str], template: str) -> List[str]:
        if len(tokens) < 3 or tokens[0] != '(' or tokens[-1] != ')' or '(' in tokens[1:-1] or ')' in tokens[1:-1]:
            raise TemplateError(f'unsupported parenthesisation: {template}')
        return tokens[1:-1]

    @staticmethod
    def _parse_sum(tokens: List[str], template: str) -> List[TemplateTerm]:
        terms = []
        summand: List[str] = []
        for token in tokens + ['+']:
            if token != '+':
                summand.append(token)
                continue
            if not summand:
                raise TemplateError(f'empty summand in: {template}')
            constant = None
            powers: Dict[str, int] = {}
            for factor in summand:
                match = CONSTANT_PATTERN.fullmatch(factor)
                if match:
                    if constant is not None:
                        raise TemplateError(f'product of constants is not linear: {template}')
                    constant = int(match.group(1))
                    continue
                if factor == 'c':
                    raise TemplateError(f'unnumbered constant in: {template}')
                name, exponent = POWER_PATTERN.fullmatch(factor).groups()
                powers[name] = powers.get(name, 0) + int(exponent or 1)
            terms.append(TemplateTerm(constant=constant, powers=tuple(sorted(powers.items()))))
            summand = []
        return terms

    # ------------------------------------------------------------------
    # fitting

    def fit_constants(self, template, data: Dataset) -> Tuple[np.ndarray, float]:
        """
        Ordinary least squares for the template's constants

        Normal equations with a Cholesky solve, or the minimum-norm solution
        when the design matrix is rank deficient.

        Returns:
            (constants c1..cm, sum of squared errors)
        """
        if isinstance(template, str):
            template = self.parse_template(template)
        if data.rows < 1:
            raise DatasetError('dataset has no rows')
        for term in (*template.terms, *template.denominator):
            for name, _ in term.powers:
                if name not in data.variables:
                    raise TemplateError(f'{name!r} in template {template.text!r} is not a dataset column')

        scale = np.ones(data.rows)
        if template.denominator:
            scale = sum(term.evaluate(data) for term in template.denominator)

        m = template.constants
        design = np.zeros((data.rows, m))
        offset = np.zeros(data.rows)
        for term in template.terms:
            column = term.evaluate(data) / scale
            if term.constant is None:
                offset += column
            else:
                design[:, term.constant - 1] += column
        target = data.y - offset

        constants = self._least_squares(design, target) if m else np.zeros(0)
        residual = design @ constants - target
        sse = float(residual @ residual)
        return constants, sse

    @staticmethod
    def _least_squares(design: np.ndarray, target: np.ndarray) -> np.ndarray:
        normal = design.T @ design
        rhs = design.T @ target
        tolerance = RANK_TOLERANCE * max(float(np.max(np.diag(normal))), np.finfo(float).tiny)
        eigenvalues, eigenvectors = linalg.eigh(normal)
        keep = eigenvalues > tolerance
        if keep.all():
            return linalg.cho_solve(linalg.cho_factor(normal), rhs)
        logger.debug('rank-deficient design (%d of %d columns); minimum-norm solution', keep.sum(), len(keep))
        basis = eigenvectors[:, keep]
        return basis @ ((basis.T @ rhs) / eigenvalues[keep])

    # ------------------------------------------------------------------
    # search

    def run_search(self, g: Pcfg, data: Dataset, count: int, seed: int, max_steps: int = 1000) -> List[Candidate]:
        """
        Sample, deduplicate by expression class, fit and rank

        Ranking: SSE ascending, then prior descending (candidates without a
        prior last), then template text.
        """
        family = self.grammar_service.classify_family(g)
        if family is not None and family.kind is FamilyKind.RATIONAL:
            raise TemplateError('rational templates carry constants in the denominator')

        report = self.derivation_service.sample(g, count, max_steps, seed)
        groups: Dict[str, List[str]] = {}
        classes: Dict[str, object] = {}
        for string in report.strings:
            key = string
            if family is not None:
                cls = self.expression_service.canonicalize(family, string)
                key = self.expression_service.class_to_expression(cls)
                classes[key] = cls
            groups.setdefault(key, []).append(string)

        candidates = []
        for key, strings in groups.items():
            string = min(strings, key=lambda text: (len(text.split()), text))
            template, _ = self.postprocess_constants(string)
            try:
                constants, sse = self.fit_constants(template, data)
            except TemplateError as e:
                logger.warning('skipping %r: %s', string, e.message)
                continue
            cls = classes.get(key)
            candidates.append(Candidate(
                template=template,
                string=string,
                constants=constants.tolist(),
                sse=sse,
                prior=self._prior(family, cls) if cls is not None else None,
                class_json=cls.to_json() if cls is not None else None,
                expression=key if cls is not None else None,
            ))

        if not candidates:
            raise TemplateError('no sampled template could be fitted')
        candidates.sort(key=lambda c: (c.sse, c.prior is None, -(c.prior or 0.0), c.template))
        logger.debug('ranked %d candidates from %d samples', len(candidates), count)
        return candidates

    def _prior(self, family, cls) -> Optional[float]:
        k = cls.k if hasattr(cls, 'k') else max(cls.numerator.k, cls.denominator.k)
        epsilon = None if k <= EXACT_PRIOR_MAX_K else PRIOR_EPSILON
        try:
            value = self.probability_service.expression_probability(family, cls, epsilon)
        except PcfgError as e:
            logger.warning('no prior for class %s: %s', cls.to_json(), e.message)
            return None
        return value if epsilon is None else value.estimate
