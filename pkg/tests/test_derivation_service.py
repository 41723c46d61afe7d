import math

import pytest

from src.models.derivation import ParseTree
from src.models.errors import ExpressionSyntaxError, NullRuleError, NumericGuardError
from src.services.derivation_service import tokenize

BINARY = "start: S\nS -> S S [0.4]\nS -> 'x' [0.6]"

EXAMPLE_CHAIN = """
start: S
S -> A B [1.0]
A -> 'x' [1.0]
B -> C [0.5]
B -> 'y' [0.5]
C -> 'y' [1.0]
"""

AMBIGUOUS = """
start: S
S -> S S [0.3]
S -> A [0.3]
S -> 'a' [0.4]
A -> 'a' 'b' [0.5]
A -> 'b' [0.5]
"""


def _rule(g, lhs, rhs):
    return next(rule for rule in g.rules_for(lhs) if rule.rhs_names() == rhs)


def test_tree_probability_of_binary_tree(parse, derivation_service):
    """Two S -> S S and three S -> x applications give p^2 (1-p)^3"""
    g = parse(BINARY)
    split, leaf = _rule(g, 'S', ('S', 'S')), _rule(g, 'S', ('x',))
    x = ParseTree.apply(leaf, [ParseTree.leaf('x')])
    tree = ParseTree.apply(split, [ParseTree.apply(split, [x, x]), x])
    assert derivation_service.tree_probability(tree) == pytest.approx(0.4 ** 2 * 0.6 ** 3, abs=1e-15)
    assert derivation_service.tree_yield(tree) == ('x', 'x', 'x')
    assert tree.to_bracketed() == '(S (S (S x) (S x)) (S x))'


def test_tree_probability_single_rule(parse, derivation_service):
    g = parse("start: S\nS -> 'x' [1.0]")
    tree = ParseTree.apply(g.rules[0], [ParseTree.leaf('x')])
    assert derivation_service.tree_probability(tree) == 1.0


def test_enumerate_trees_of_chain_grammar(parse, derivation_service):
    """Both trees of 'x y' have probability 0.5"""
    g = parse(EXAMPLE_CHAIN)
    trees = derivation_service.enumerate_parse_trees(g, ('x', 'y'))
    assert len(trees) == 2
    assert sorted(derivation_service.tree_probability(t) for t in trees) == pytest.approx([0.5, 0.5])


def test_enumerate_trees_refuses_cycles(parse, derivation_service):
    with pytest.raises(NumericGuardError):
        derivation_service.enumerate_parse_trees(parse("start: S\nS -> S [0.3]\nS -> 'x' [0.7]"), ('x',))


def test_enumerate_trees_limit(parse, derivation_service):
    """Catalan-many trees of x^8 exceed a small limit"""
    with pytest.raises(NumericGuardError):
        derivation_service.enumerate_parse_trees(parse(BINARY), ('x',) * 8, limit=100)


def test_string_probability_sums_ambiguous_parses(parse, derivation_service):
    assert derivation_service.string_probability(parse(BINARY), tokenize('x x x')) == pytest.approx(0.06912, abs=1e-15)


def test_string_probability_trivial(parse, derivation_service):
    assert derivation_service.string_probability(parse("start: S\nS -> 'x' [1.0]"), ('x',)) == 1.0


def test_string_probability_linear_grammar(load, derivation_service):
    """c + c x1 has the single tree (1-p) p q1"""
    assert derivation_service.string_probability(load('linear2.g'), tokenize('c + c x1')) == pytest.approx(0.125)


def test_string_probability_chain_grammar(parse, derivation_service):
    assert derivation_service.string_probability(parse(EXAMPLE_CHAIN), ('x', 'y')) == pytest.approx(1.0)


@pytest.mark.parametrize('text', ['a', 'b', 'a b', 'b a', 'a a b', 'a b b', 'b a b a', 'a a a a'])
def test_string_probability_matches_tree_enumeration(parse, derivation_service, text):
    """Inside CKY equals the sum over every parse tree"""
    g = parse(AMBIGUOUS)
    w = tokenize(text)
    trees = derivation_service.enumerate_parse_trees(g, w)
    assert all(derivation_service.tree_yield(t) == w for t in trees)
    expected = math.fsum(derivation_service.tree_probability(t) for t in trees)
    assert derivation_service.string_probability(g, w) == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_string_probability_through_linear_cycle(load, derivation_service):
    """A -> B | a, B -> A | b: solving the unit system gives P_A(b) = 0.375"""
    g = load('cycle.g')
    assert derivation_service.string_probability(g, ('b',)) == pytest.approx(0.375, abs=1e-12)
    assert derivation_service.string_probability(g, ('a',)) == pytest.approx(0.625, abs=1e-12)


def test_string_probability_errors(parse, load, derivation_service):
    g = load('linear2.g')
    with pytest.raises(ExpressionSyntaxError):
        derivation_service.string_probability(g, ())
    assert derivation_service.string_probability(g, ('c', '+', 'c', 'x9')) == 0.0
    assert derivation_service.unknown_tokens(g, ('c', 'x9', 'x9')) == ['x9']
    with pytest.raises(NullRuleError):
        derivation_service.string_probability(parse("S -> [0.3]\nS -> 'x' [0.7]"), ('x',))


def test_to_cnf_keeps_cnf_grammar(parse, derivation_service):
    g = parse("start: S\nS -> 'x' [1.0]")
    result = derivation_service.to_cnf(g)
    assert result.grammar == g
    assert result.introduced == {}


def test_to_cnf_shape_and_distribution(load, derivation_service):
    """Every rule is A -> B C or A -> 't'; string probabilities survive"""
    g = load('linear1.g')
    result = derivation_service.to_cnf(g)
    for rule in result.grammar.rules:
        names = [symbol.is_terminal for symbol in rule.rhs]
        assert names in ([True], [False, False])
    assert result.grammar.start == 'E'
    assert set(result.introduced) <= set(result.grammar.nonterminals)
    assert derivation_service.string_probability(g, ('c',), cnf=result) == pytest.approx(0.5)
    assert derivation_service.string_probability(g, tokenize('c + c x1'), cnf=result) == pytest.approx(0.25)


def test_to_cnf_rejects_null_rules(load, derivation_service):
    with pytest.raises(NullRuleError):
        derivation_service.to_cnf(load('null_rule.g'))


def test_sample_trivial_grammar(parse, derivation_service):
    report = derivation_service.sample(parse("start: S\nS -> 'x' [1.0]"), count=100, max_steps=10, seed=1)
    assert report.terminated == 100
    assert report.strings == {'x': 1.0}


def test_sample_is_reproducible(load, derivation_service):
    g = load('linear2.g')
    first = derivation_service.sample(g, count=500, max_steps=100, seed=42)
    second = derivation_service.sample(g, count=500, max_steps=100, seed=42)
    assert first.to_dict() == second.to_dict()
    assert list(first.to_dict(top=3)['strings']) == list(first.strings)[:3]


def test_sample_termination_rate(parse, derivation_service):
    """S -> S S [0.6] terminates with probability 1/p - 1 = 2/3"""
    count = 4000
    report = derivation_service.sample(parse("start: S\nS -> S S [0.6]\nS -> 'x' [0.4]"), count, 500, seed=7)
    sigma = math.sqrt((2 / 3) * (1 / 3) / count)
    assert report.termination_rate == pytest.approx(2 / 3, abs=4 * sigma + 0.005)


def test_sample_frequencies_match_string_probability(load, derivation_service):
    g = load('linear2.g')
    count = 5000
    report = derivation_service.sample(g, count, 1000, seed=3)
    for text in ('c', 'c + c x1', 'c + c x2 + c x1'):
        p = derivation_service.string_probability(g, tokenize(text))
        assert report.strings.get(text, 0.0) == pytest.approx(p, abs=4 * math.sqrt(p * (1 - p) / count) + 1e-3)
