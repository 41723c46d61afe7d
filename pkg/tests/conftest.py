from pathlib import Path

import pytest

from src.models.grammar import FamilyKind, GrammarFamily, LinearParams
from src.services.derivation_service import DerivationService
from src.services.expression_service import ExpressionService
from src.services.grammar_service import GrammarService
from src.services.probability_service import ProbabilityService
from src.services.regression_service import RegressionService
from src.services.transform_service import TransformService

DATA_DIR = Path(__file__).parent / 'data'


@pytest.fixture
def data_dir():
    return DATA_DIR


@pytest.fixture
def grammar_service():
    return GrammarService()


@pytest.fixture
def derivation_service():
    return DerivationService()


@pytest.fixture
def transform_service():
    return TransformService()


@pytest.fixture
def expression_service():
    return ExpressionService()


@pytest.fixture
def probability_service():
    return ProbabilityService()


@pytest.fixture
def regression_service():
    return RegressionService()


@pytest.fixture
def parse(grammar_service):
    """Grammar text -> Pcfg"""
    return grammar_service.parse_grammar


@pytest.fixture
def load(grammar_service):
    """Fixture file name -> validated Pcfg"""
    return lambda name: grammar_service.load_grammar(DATA_DIR / name)


@pytest.fixture
def linear_family():
    """(p, q) -> linear GrammarFamily, without a grammar file"""
    return _linear_family


def _linear_family(p, q):
    names = tuple(f'x{i}' for i in range(1, len(q) + 1))
    return GrammarFamily(kind=FamilyKind.LINEAR, params=LinearParams(p=p, q=tuple(q)), variables=names)
