import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.models.errors import ExpressionSyntaxError, NotInLanguageError
from src.models.expression import LinearClass, MonomialKey, PolynomialClass, RationalClass
from src.models.grammar import FamilyKind, GrammarFamily, LinearParams
from src.services.expression_service import ExpressionService, weighted_surjections

LINEAR3 = GrammarFamily(
    kind=FamilyKind.LINEAR, params=LinearParams(p=0.5, q=(0.2, 0.3, 0.5)), variables=('x1', 'x2', 'x3')
)


@pytest.fixture
def linear(load, grammar_service):
    return grammar_service.classify_family(load('linear2.g'))


@pytest.fixture
def polynomial(load, grammar_service):
    return grammar_service.classify_family(load('polynomial.g'))


@pytest.fixture
def rational(load, grammar_service):
    return grammar_service.classify_family(load('rational.g'))


@pytest.fixture
def alt_linear(load, grammar_service):
    return grammar_service.classify_family(load('alt_linear.g'))


def test_canonicalize_linear(linear, expression_service):
    """Order and repetition of variables do not matter"""
    assert expression_service.canonicalize(linear, 'c + c x2 + c x1 + c x2') == LinearClass(variables=(1, 2))
    assert expression_service.canonicalize(linear, 'c') == LinearClass(variables=())


def test_canonicalize_polynomial(polynomial, expression_service):
    """Factor order inside a term does not matter"""
    first = expression_service.canonicalize(polynomial, 'c + c x1 x2 x1')
    second = expression_service.canonicalize(polynomial, 'c + c x2 x1 x1')
    assert first == second
    assert first.monomials == (MonomialKey.of({1: 2, 2: 1}),)


def test_canonicalize_rational(rational, expression_service):
    """A quotient's class pairs the classes of its two sides"""
    cls = expression_service.canonicalize(rational, '( c + c x1 x1 + c x1 ) / ( c )')
    numerator = expression_service.canonicalize(
        rational.model_copy(update={'kind': FamilyKind.POLYNOMIAL}), 'c + c x1 x1 + c x1'
    )
    assert cls == RationalClass(numerator=numerator, denominator=PolynomialClass(monomials=()))


def test_canonicalize_alt_linear(alt_linear, expression_service):
    assert expression_service.canonicalize(alt_linear, 'c x2 + c x1 + c') == LinearClass(variables=(1, 2))
    assert expression_service.canonicalize(alt_linear, 'c') == LinearClass(variables=())
    with pytest.raises(NotInLanguageError):
        expression_service.canonicalize(alt_linear, 'c x1 + c x2 + c')


@pytest.mark.parametrize('text', ['c + x1', 'x1', 'c + c', 'c + c x9', 'c c x1'])
def test_canonicalize_rejects_foreign_strings(linear, expression_service, text):
    with pytest.raises(NotInLanguageError):
        expression_service.canonicalize(linear, text)


@given(st.lists(st.integers(min_value=1, max_value=3), max_size=4))
def test_canonical_linear_class_is_variable_set(terms):
    """Two linear strings share a class exactly when they use the same variables"""
    text = 'c' + ''.join(f' + c x{index}' for index in terms)
    assert ExpressionService().canonicalize(LINEAR3, text).variables == tuple(sorted(set(terms)))


def test_parse_expression_linear(expression_service, linear_family):
    family = linear_family(0.5, (0.2, 0.3, 0.5))
    assert expression_service.parse_expression(family, 'c') == LinearClass(variables=())
    assert expression_service.parse_expression(family, 'c + c*x1 + c*x3') == LinearClass(variables=(1, 3))
    assert expression_service.parse_expression(family, ' c+c*x3 +c*x1') == LinearClass(variables=(1, 3))


def test_parse_expression_polynomial(polynomial, expression_service):
    cls = expression_service.parse_expression(polynomial, 'c + c*x1^2*x2 + c*x2')
    assert cls == PolynomialClass(monomials=(MonomialKey.of({1: 2, 2: 1}), MonomialKey.of({2: 1})))


def test_parse_expression_rational(polynomial, expression_service):
    family = polynomial.model_copy(update={'kind': FamilyKind.RATIONAL})
    cls = expression_service.parse_expression(family, '(c + c*x1^2)/(c + c*x2)')
    assert cls.numerator == PolynomialClass(monomials=(MonomialKey.of({1: 2}),))
    assert cls.denominator == PolynomialClass(monomials=(MonomialKey.of({2: 1}),))


@pytest.mark.parametrize('text', ['', 'c*x1', 'c + c + c*x1', 'c + c*x4', 'c + c*x1^0', 'c + x1', 'c + c*x1^2', 'c + c*x1*x2', 'c + c*y1'])
def test_parse_expression_errors(expression_service, linear_family, text):
    family = linear_family(0.5, (0.2, 0.3, 0.5))
    with pytest.raises(ExpressionSyntaxError):
        expression_service.parse_expression(family, text)


def test_errors_name_the_variables(parse, grammar_service, expression_service):
    """xI refers to the I-th variable in sorted order; errors spell that mapping out"""
    g = parse("start: E\nE -> E '+' 'c' V [0.5]\nE -> 'c' [0.5]\nV -> 'temp' [0.5]\nV -> 'pressure' [0.5]")
    family = grammar_service.classify_family(g)
    assert family.variables == ('pressure', 'temp')
    with pytest.raises(ExpressionSyntaxError, match='x1=pressure, x2=temp'):
        expression_service.parse_expression(family, 'c + c*x3')
    with pytest.raises(NotInLanguageError, match='x1=pressure, x2=temp'):
        expression_service.canonicalize(family, 'c + c volume')


def test_parse_expression_repeated_factor(polynomial, expression_service):
    with pytest.raises(ExpressionSyntaxError):
        expression_service.parse_expression(polynomial, 'c + c*x1*x1')


def test_class_to_expression_parses_back(polynomial, expression_service):
    cls = expression_service.parse_expression(polynomial, 'c + c*x2 + c*x1^3*x2')
    text = expression_service.class_to_expression(cls)
    assert text == 'c + c*x1^3*x2 + c*x2'
    assert expression_service.parse_expression(polynomial, text) == cls
    assert expression_service.class_to_json(cls) == [{'1': 3, '2': 1}, {'2': 1}]


def test_enumerate_linear_single_variable(load, grammar_service, expression_service):
    family = grammar_service.classify_family(load('linear1.g'))
    strings = expression_service.enumerate_strings(family, LinearClass(variables=(1,)), max_plus=3)
    assert [text for text, _ in strings] == ['c + c x1', 'c + c x1 + c x1', 'c + c x1 + c x1 + c x1']
    assert [p for _, p in strings] == pytest.approx([0.25, 0.125, 0.0625])


def test_enumerate_empty_class(linear, expression_service):
    assert expression_service.enumerate_strings(linear, LinearClass(variables=()), max_plus=5) == [('c', 0.5)]


def test_enumerate_both_orders(linear, expression_service):
    strings = expression_service.enumerate_strings(linear, LinearClass(variables=(1, 2)), max_plus=2)
    assert sorted(text for text, _ in strings) == ['c + c x1 + c x2', 'c + c x2 + c x1']
    assert [p for _, p in strings] == pytest.approx([0.03125, 0.03125])


def test_enumerated_strings_belong_to_class(polynomial, expression_service):
    cls = PolynomialClass(monomials=(MonomialKey.of({1: 2}), MonomialKey.of({1: 1, 2: 1})))
    strings = expression_service.enumerate_strings(polynomial, cls, max_plus=3)
    assert strings
    assert all(expression_service.canonicalize(polynomial, text) == cls for text, _ in strings)
    assert len({text for text, _ in strings}) == len(strings)


def test_enumerate_rational_pairs_sides(rational, expression_service):
    cls = RationalClass(numerator=PolynomialClass(monomials=(MonomialKey.of({1: 1}),)), denominator=PolynomialClass())
    strings = expression_service.enumerate_strings(rational, cls, max_plus=2)
    assert [text for text, _ in strings] == ['( c + c x1 ) / ( c )', '( c + c x1 + c x1 ) / ( c )']
    assert all(expression_service.canonicalize(rational, text) == cls for text, _ in strings)


def test_enumerate_alt_linear(alt_linear, expression_service):
    strings = expression_service.enumerate_strings(alt_linear, LinearClass(variables=(1, 2)), max_plus=2)
    assert len(strings) == 1
    text, probability = strings[0]
    assert text == 'c x2 + c x1 + c'
    assert probability == pytest.approx(0.24)


def test_enumerate_requires_room_for_class(linear, expression_service):
    with pytest.raises(ValueError):
        expression_service.enumerate_strings(linear, LinearClass(variables=(1, 2)), max_plus=1)


def test_weighted_surjections():
    assert weighted_surjections([1, 1], 3) == 6
    assert weighted_surjections([2], 2) == 4
    assert weighted_surjections([1, 1, 1], 2) == 0


def test_iter_classes(linear_family, expression_service):
    classes = list(expression_service.iter_classes(linear_family(0.5, (0.2, 0.3, 0.5))))
    assert len(classes) == 8
    assert classes[0] == LinearClass(variables=())
    assert classes[-1] == LinearClass(variables=(1, 2, 3))
