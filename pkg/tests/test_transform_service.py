import itertools
import math

import numpy as np
import pytest

from src.models.errors import GrammarValidationError, NullRuleError

SELF_LOOP = "start: S\nS -> S [0.3]\nS -> 'x' [0.7]"

THREE_CYCLE = """
start: A
A -> B [0.5]
A -> 'a' [0.5]
B -> C [0.6]
B -> 'b' [0.4]
C -> A [0.7]
C -> 'c' [0.2]
C -> C [0.1]
"""


def _inside_oracle(g, w):
    """P(w) for lexical, unit and binary rules: per-span sums closed under (I - U)^-1"""
    names = list(g.nonterminals)
    index = {name: i for i, name in enumerate(names)}
    unit = np.zeros((len(names), len(names)))
    lexical = {}
    binary = []
    for rule in g.rules:
        if rule.is_unit:
            unit[index[rule.lhs], index[rule.rhs[0].name]] += rule.probability
        elif len(rule.rhs) == 1:
            lexical.setdefault(rule.rhs[0].name, np.zeros(len(names)))[index[rule.lhs]] += rule.probability
        else:
            left, right = rule.rhs_names()
            binary.append((index[rule.lhs], index[left], index[right], rule.probability))
    closure = np.linalg.inv(np.eye(len(names)) - unit)
    n = len(w)
    chart = {}
    for length in range(1, n + 1):
        for i in range(n - length + 1):
            j = i + length
            if length == 1:
                base = lexical.get(w[i], np.zeros(len(names)))
            else:
                base = np.zeros(len(names))
                for k in range(i + 1, j):
                    for lhs, left, right, p in binary:
                        base[lhs] += p * chart[i, k][left] * chart[k, j][right]
            chart[i, j] = closure @ base
    return float(chart[0, n][index[g.start]])


def _random_cycle_grammar(seed):
    """Four nonterminals over a, b with one unit cycle of length 1 to 3 through the start"""
    rng = np.random.default_rng(seed)
    names = ['A', 'B', 'C', 'D']
    cycle = names[:1 + seed % 3]
    lines = ['start: A']
    for i, name in enumerate(names):
        bodies = ["'a'", "'b'", f'{rng.choice(names)} {rng.choice(names)}']
        if i < len(cycle):
            bodies.append(cycle[(i + 1) % len(cycle)])
        for body, weight in zip(bodies, rng.dirichlet(np.ones(len(bodies)))):
            lines.append(f'{name} -> {body} [{float(weight)!r}]')
    return '\n'.join(lines)


def _lhs_sums(g):
    return {name: math.fsum(rule.probability for rule in g.rules_for(name)) for name in g.nonterminals}


def test_find_self_loop(parse, transform_service):
    report = transform_service.find_linear_cycles(parse(SELF_LOOP))
    assert report.cycles == [('S',)]
    assert report.lengths == [1]


def test_find_two_cycle(load, transform_service):
    report = transform_service.find_linear_cycles(load('cycle.g'))
    assert report.cycles == [('A', 'B')]
    assert report.to_dict() == {'cycles': [['A', 'B']], 'lengths': [2]}


def test_find_no_cycles(load, transform_service):
    assert transform_service.find_linear_cycles(load('linear2.g')).cycles == []


def test_remove_self_loop_rescales(parse, transform_service):
    """S -> S [0.3] | x [0.7] becomes S -> x [1.0]"""
    result = transform_service.remove_linear_cycles(parse(SELF_LOOP))
    assert len(result.rules) == 1
    assert result.rules[0].rhs_names() == ('x',)
    assert result.rules[0].probability == pytest.approx(1.0, abs=1e-15)


def test_remove_two_cycle(load, transform_service):
    """The bypassed B inherits A's rules scaled by P(B -> A)"""
    result = transform_service.remove_linear_cycles(load('cycle.g'))
    b_rules = {rule.rhs_names(): rule.probability for rule in result.rules_for('B')}
    assert b_rules == pytest.approx({('a',): 0.25, ('b',): 0.75})
    assert transform_service.find_linear_cycles(result).cycles == []


def test_remove_cycle_free_is_unchanged(load, transform_service):
    g = load('linear2.g')
    assert transform_service.remove_linear_cycles(g) == g


def test_self_loop_only_nonterminal_stays(parse, transform_service):
    """A nonterminal whose only rule is A -> A is left as it is"""
    g = parse("start: S\nS -> 'x' [0.5]\nS -> A [0.5]\nA -> A [1.0]")
    result = transform_service.remove_linear_cycles(g)
    assert transform_service.find_linear_cycles(result).cycles == [('A',)]
    assert result == g


def test_eliminate_cycle_keeps_sums(parse, transform_service):
    """One bypass step keeps every per-lhs sum at 1"""
    g = parse(THREE_CYCLE)
    step = transform_service.eliminate_cycle(g, ('A', 'B', 'C'))
    assert all(abs(total - 1.0) <= 1e-12 for total in _lhs_sums(step).values())
    assert not any(rule.lhs == 'C' and rule.rhs_names() == ('A',) for rule in step.rules)


def test_remove_cycles_preserves_distribution(parse, transform_service, derivation_service):
    """Single-letter probabilities match the closed-form geometric sum over unit chains"""
    g = parse(THREE_CYCLE)
    result = transform_service.remove_linear_cycles(g)
    assert transform_service.find_linear_cycles(result).cycles == []
    assert all(abs(total - 1.0) <= 1e-12 for total in _lhs_sums(result).values())
    for terminal in ('a', 'b', 'c'):
        expected = _inside_oracle(g, (terminal,))
        assert derivation_service.string_probability(result, (terminal,)) == pytest.approx(expected, abs=1e-12)
        assert _inside_oracle(result, (terminal,)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize('seed', range(20))
def test_remove_cycles_random_corpus(parse, transform_service, derivation_service, seed):
    """Every string up to length 5 keeps its probability once the unit cycle is gone"""
    g = parse(_random_cycle_grammar(seed))
    assert transform_service.find_linear_cycles(g).lengths == [1 + seed % 3]
    result = transform_service.remove_linear_cycles(g)
    assert transform_service.find_linear_cycles(result).cycles == []
    cnf = derivation_service.to_cnf(result)
    for length in range(1, 6):
        for w in itertools.product('ab', repeat=length):
            expected = _inside_oracle(g, w)
            assert derivation_service.string_probability(result, w, cnf) == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_remove_cycles_rejects_null_rules(load, transform_service):
    with pytest.raises(NullRuleError):
        transform_service.remove_linear_cycles(load('null_rule.g'))


def test_p_epsilon_quadratic_root(load, transform_service):
    """t = 0.25 + 0.25 t^2 has least root 2 - sqrt(3)"""
    value = transform_service.p_epsilon(load('null_rule.g'), 'A', tol=1e-12)
    assert value == pytest.approx(2 - math.sqrt(3), abs=1e-10)


def test_p_epsilon_trivial(parse, transform_service):
    assert transform_service.p_epsilon(parse("start: A\nA -> 'x' [1.0]"), 'A') == 0.0
    assert transform_service.p_epsilon(parse('start: A\nA -> [1.0]'), 'A') == 1.0


def test_p_epsilon_unknown_nonterminal(parse, transform_service):
    with pytest.raises(GrammarValidationError):
        transform_service.p_epsilon(parse("start: A\nA -> 'x' [1.0]"), 'B')


def test_fixed_point_iterates_increase(load, transform_service):
    history = []
    transform_service.least_fixed_point(load('null_rule.g'), terminal_factor=0.0, tol=1e-12, history=history)
    values = [step['A'] for step in history]
    assert values == sorted(values)
    assert values[0] == 0.25


@pytest.mark.parametrize('p', [0.4, 0.6, 0.8])
def test_termination_probability(parse, transform_service, p):
    """S -> S S [p] | x terminates with probability min(1, 1/p - 1)"""
    g = parse(f"start: S\nS -> S S [{p}]\nS -> 'x' [{1 - p}]")
    assert transform_service.termination_probabilities(g)['S'] == pytest.approx(min(1.0, 1 / p - 1), abs=1e-10)


def test_termination_probability_of_one_is_exact(parse, transform_service):
    """The subcritical fixed point lands on 1, not a few ulps below it"""
    g = parse("start: S\nS -> S S [0.4]\nS -> 'x' [0.6]")
    assert abs(transform_service.termination_probabilities(g)['S'] - 1.0) <= 1e-15


@pytest.mark.parametrize('p', [0.4, 0.6, 0.8])
def test_consistency_estimate_matches_fixed_point(parse, transform_service, p):
    g = parse(f"start: S\nS -> S S [{p}]\nS -> 'x' [{1 - p}]")
    report = transform_service.consistency_estimate(g, 10 ** 6, max_steps=10 ** 4, seed=2024)
    assert report.fixed_point == pytest.approx(min(1.0, 1 / p - 1), abs=1e-10)
    assert report.halfwidth > 0 or report.monte_carlo == report.fixed_point
    assert abs(report.monte_carlo - report.fixed_point) <= report.halfwidth


def test_consistency_estimate_supercritical(parse, transform_service):
    g = parse("start: S\nS -> S S [0.6]\nS -> 'x' [0.4]")
    samples = 20000
    report = transform_service.consistency_estimate(g, samples, max_steps=2000, seed=11)
    assert report.fixed_point == pytest.approx(2 / 3, abs=1e-9)
    sigma = math.sqrt((2 / 3) * (1 / 3) / samples)
    assert report.monte_carlo == pytest.approx(2 / 3, abs=4 * sigma)
    variance = max(report.monte_carlo * (1 - report.monte_carlo), report.fixed_point * (1 - report.fixed_point))
    assert report.halfwidth == pytest.approx(1.96 * math.sqrt(variance / samples))


def test_consistency_estimate_trivial(parse, transform_service):
    report = transform_service.consistency_estimate(parse("start: S\nS -> 'x' [1.0]"), 100, 10, seed=0)
    assert report.to_dict()['fixed_point'] == 1.0
    assert report.monte_carlo == 1.0
    assert report.halfwidth == 0.0


def test_consistency_estimate_is_reproducible(parse, transform_service):
    g = parse("start: S\nS -> S S [0.55]\nS -> 'x' [0.45]")
    first = transform_service.consistency_estimate(g, 3000, 300, seed=5)
    second = transform_service.consistency_estimate(g, 3000, 300, seed=5)
    assert first == second
