"""
推導服務
Parse-tree probabilities, seeded sampling of leftmost derivations, probabilistic
CNF conversion and inside-CKY string probabilities
"""

import bisect
import itertools
import logging
import math
from collections import Counter, defaultdict
from typing import Dict, List, Sequence, Tuple

import networkx as nx
import numpy as np

from src.models.derivation import CnfResult, ParseTree, SampleReport
from src.models.errors import (
    ExpressionSyntaxError,
    NonProductiveGrammarError,
    NullRuleError,
    NumericGuardError,
)
from src.models.grammar import Pcfg, Rule, Symbol
from src.services.config_service import EngineConfig
from src.services.grammar_service import GrammarService, linear_cycles, unit_rule_graph
from src.services.transform_service import TransformService

logger = logging.getLogger(__name__)


def tokenize(text: str) -> Tuple[str, ...]:
    """Whitespace-separated terminal names"""
    return tuple(text.split())


def fresh_name(prefix: str, taken: set) -> str:
    """First unused name prefix1, prefix2, ..."""
    index = 1
    while f'{prefix}{index}' in taken:
        index += 1
    name = f'{prefix}{index}'
    taken.add(name)
    return name


class _RuleSampler:
    """Per-nonterminal cumulative tables for inverse-CDF rule choice"""

    def __init__(self, g: Pcfg):
        self.tables: Dict[str, Tuple[List[float], Tuple[Rule, ...]]] = {}
        for name in g.nonterminals:
            rules = g.rules_for(name)
            if rules:
                cumulative = np.cumsum([rule.probability for rule in rules]).tolist()
                self.tables[name] = (cumulative, rules)

    def choose(self, name: str, u: float) -> Rule:
        cumulative, rules = self.tables[name]
        index = bisect.bisect_right(cumulative, u * cumulative[-1])
        return rules[min(index, len(rules) - 1)]


class _UniformStream:
    """Batched uniforms from a seeded PCG64 generator"""

    def __init__(self, seed: int, batch: int):
        self.rng = np.random.default_rng(seed)
        self.batch = batch
        self.buffer: List[float] = []
        self.index = 0

    def next(self) -> float:
        if self.index >= len(self.buffer):
            self.buffer = self.rng.random(self.batch).tolist()
            self.index = 0
        value = self.buffer[self.index]
        self.index += 1
        return value


class DerivationService:
    """推導服務"""

    def __init__(self, config=EngineConfig):
        self.config = config
        self.grammar_service = GrammarService(config)
        self.transform_service = TransformService(config)

    # ------------------------------------------------------------------
    # trees

    def tree_probability(self, t: ParseTree) -> float:
        """Product of the applied rules' probabilities, accumulated in log space"""
        log_total = 0.0
        for rule in t.rules():
            if rule.probability <= 0:
                return 0.0
            log_total += math.log(rule.probability)
        return math.exp(log_total)

    def tree_yield(self, t: ParseTree) -> Tuple[str, ...]:
        if t.node.is_terminal:
            return (t.node.name,)
        return tuple(itertools.chain.from_iterable(self.tree_yield(child) for child in t.children))

    # ------------------------------------------------------------------
    # sampling

    def sample(self, g: Pcfg, count: int, max_steps: int, seed: int) -> SampleReport:
        """
        Leftmost derivations with rules drawn by probability

        A run is non-terminated as soon as applied rules plus pending
        nonterminals exceed max_steps: each pending nonterminal still needs a
        rule, so it could not finish within the cutoff.

        Args:
            g: grammar
            count: number of derivations
            max_steps: rule-application cutoff
            seed: PCG64 seed

        Returns:
            SampleReport with strings ordered by frequency, then text
        """
        if count < 1 or max_steps < 1:
            raise ValueError('count and max_steps must be at least 1')

        sampler = _RuleSampler(g)
        stream = _UniformStream(seed, self.config.SAMPLE_BATCH)
        counts: Counter = Counter()
        terminated = 0

        for _ in range(count):
            stack: List[Symbol] = [Symbol.nonterminal(g.start)]
            output: List[str] = []
            steps = 0
            pending = 1
            finished = True
            while stack:
                symbol = stack.pop()
                if symbol.is_terminal:
                    output.append(symbol.name)
                    continue
                if steps + pending > max_steps:
                    finished = False
                    break
                rule = sampler.choose(symbol.name, stream.next())
                steps += 1
                pending -= 1
                for child in reversed(rule.rhs):
                    stack.append(child)
                    if not child.is_terminal:
                        pending += 1
            if finished:
                terminated += 1
                counts[' '.join(output)] += 1

        ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        logger.debug('sampled %d derivations, %d terminated', count, terminated)
        return SampleReport(
            samples=count,
            terminated=terminated,
            max_steps=max_steps,
            seed=seed,
            strings={text: hits / count for text, hits in ordered},
        )

    # ------------------------------------------------------------------
    # CNF

    def to_cnf(self, g: Pcfg) -> CnfResult:
        """
        Weakly equivalent CNF grammar with the same string distribution

        Raises:
            NullRuleError: g has a null rule
            NonProductiveGrammarError: the start symbol derives no string
        """
        if g.has_null_rules():
            raise NullRuleError('CNF conversion requires a grammar without null rules')

        g = self.transform_service.remove_linear_cycles(g)
        productive = self.grammar_service.productive(g)
        if g.start not in productive:
            raise NonProductiveGrammarError(f'start symbol {g.start} derives no terminal string')
        kept = [
            rule for rule in g.rules
            if rule.probability > 0
            and rule.lhs in productive
            and all(symbol.is_terminal or symbol.name in productive for symbol in rule.rhs)
        ]
        g = g.with_rules(kept)

        collapsed = self._collapse_unit_rules(g)

        taken = set(g.nonterminals) | set(g.terminals)
        introduced: Dict[str, str] = {}
        wrappers: Dict[str, str] = {}
        suffixes: Dict[Tuple[str, ...], str] = {}
        merged: Dict[Tuple[str, Tuple[Symbol, ...]], float] = {}

        def add(lhs: str, rhs: Tuple[Symbol, ...], probability: float):
            key = (lhs, rhs)
            merged[key] = merged.get(key, 0.0) + probability

        def wrap(symbol: Symbol) -> str:
            if not symbol.is_terminal:
                return symbol.name
            if symbol.name not in wrappers:
                name = fresh_name('T', taken)
                wrappers[symbol.name] = name
                introduced[name] = f'terminal {symbol}'
                add(name, (symbol,), 1.0)
            return wrappers[symbol.name]

        def suffix(rest: Tuple[str, ...]) -> str:
            # nonterminal deriving the sequence `rest` with probability 1
            if len(rest) == 1:
                return rest[0]
            if rest not in suffixes:
                tail = suffix(rest[1:])
                name = fresh_name('X', taken)
                suffixes[rest] = name
                introduced[name] = 'suffix ' + ' '.join(rest)
                add(name, (Symbol.nonterminal(rest[0]), Symbol.nonterminal(tail)), 1.0)
            return suffixes[rest]

        for lhs, rhs, probability in collapsed:
            if len(rhs) == 1:
                add(lhs, rhs, probability)
                continue
            names = [wrap(symbol) for symbol in rhs]
            tail = suffix(tuple(names[1:]))
            add(lhs, (Symbol.nonterminal(names[0]), Symbol.nonterminal(tail)), probability)

        rules = [Rule(lhs=lhs, rhs=rhs, probability=p) for (lhs, rhs), p in merged.items()]
        rules.sort(key=lambda rule: rule.lhs != g.start)
        logger.debug('CNF conversion: %d rules, %d introduced nonterminals', len(rules), len(introduced))
        return CnfResult(
            grammar=Pcfg(start=g.start, rules=tuple(rules)),
            introduced=introduced,
            original_nonterminals=g.nonterminals,
        )

    def _collapse_unit_rules(self, g: Pcfg) -> List[Tuple[str, Tuple[Symbol, ...], float]]:
        """Replace acyclic unit chains A -> ... -> B by A -> beta with path-product weights"""
        graph = unit_rule_graph(g)
        if not nx.is_directed_acyclic_graph(graph):
            raise NumericGuardError('unit rules still form a cycle after cycle removal')

        closure: Dict[str, Dict[str, float]] = {}
        for name in reversed(list(nx.topological_sort(graph))):
            weights: Dict[str, float] = defaultdict(float)
            weights[name] = 1.0
            for rule in g.rules_for(name):
                if rule.is_unit:
                    for target, w in closure[rule.rhs[0].name].items():
                        weights[target] += rule.probability * w
            closure[name] = dict(weights)

        collapsed = []
        for name in g.nonterminals:
            if not g.rules_for(name):
                continue
            for target, weight in closure[name].items():
                for rule in g.rules_for(target):
                    if not rule.is_unit:
                        collapsed.append((name, rule.rhs, weight * rule.probability))
        return collapsed

    # ------------------------------------------------------------------
    # string probability

    def unknown_tokens(self, g: Pcfg, w: Sequence[str]) -> List[str]:
        terminals = set(g.terminals)
        return [token for token in dict.fromkeys(w) if token not in terminals]

    def string_probability(self, g: Pcfg, w: Sequence[str], cnf: CnfResult = None) -> float:
        """
        P(w) summed over all parse trees, by inside CKY on the CNF grammar

        Tokens outside the terminal set give 0 with a warning.
        """
        if not w:
            raise ExpressionSyntaxError('token sequence is empty')
        if g.has_null_rules():
            raise NullRuleError('string probability requires a grammar without null rules')
        unknown = self.unknown_tokens(g, w)
        if unknown:
            logger.warning('tokens not in the terminal set: %s', ' '.join(unknown))
            return 0.0

        cnf = cnf or self.to_cnf(g)
        lexical: Dict[str, List[Tuple[str, float]]] = defaultdict(list)
        binary: Dict[Tuple[str, str], List[Tuple[str, float]]] = defaultdict(list)
        for rule in cnf.grammar.rules:
            if len(rule.rhs) == 1:
                lexical[rule.rhs[0].name].append((rule.lhs, rule.probability))
            else:
                binary[rule.rhs_names()].append((rule.lhs, rule.probability))

        n = len(w)
        chart: Dict[Tuple[int, int], Dict[str, float]] = {}
        for i, token in enumerate(w):
            cell: Dict[str, List[float]] = defaultdict(list)
            for lhs, p in lexical.get(token, ()):
                cell[lhs].append(p)
            chart[i, i + 1] = {name: math.fsum(parts) for name, parts in cell.items()}

        for span in range(2, n + 1):
            for i in range(n - span + 1):
                j = i + span
                cell = defaultdict(list)
                for k in range(i + 1, j):
                    left = chart[i, k]
                    right = chart[k, j]
                    if not left or not right:
                        continue
                    for b, b_inside in left.items():
                        for c, c_inside in right.items():
                            for lhs, p in binary.get((b, c), ()):
                                cell[lhs].append(p * b_inside * c_inside)
                chart[i, j] = {name: math.fsum(parts) for name, parts in cell.items()}

        return chart[0, n].get(cnf.grammar.start, 0.0)

    # ------------------------------------------------------------------
    # exhaustive tree enumeration

    def enumerate_parse_trees(self, g: Pcfg, w: Sequence[str], limit: int = None) -> List[ParseTree]:
        """
        Every parse tree of w; finite without null rules and linear cycles

        Raises:
            NumericGuardError: more than `limit` trees
        """
        limit = limit or self.config.TREE_ENUMERATION_LIMIT
        if g.has_null_rules():
            raise NullRuleError('tree enumeration requires a grammar without null rules')
        cycles = linear_cycles(g)
        if cycles:
            raise NumericGuardError(f'linear cycle {" -> ".join(cycles[0])} gives infinitely many trees')

        w = tuple(w)
        memo: Dict[Tuple[str, int, int], List[ParseTree]] = {}

        def check(found: int):
            if found > limit:
                raise NumericGuardError(f'more than {limit} parse trees')

        def trees(symbol: Symbol, i: int, j: int) -> List[ParseTree]:
            if symbol.is_terminal:
                return [ParseTree.leaf(symbol.name)] if j - i == 1 and w[i] == symbol.name else []
            key = (symbol.name, i, j)
            if key in memo:
                return memo[key]
            found: List[ParseTree] = []
            for rule in g.rules_for(symbol.name):
                if rule.probability <= 0 or len(rule.rhs) > j - i:
                    continue
                for bounds in self._splits(i, j, len(rule.rhs)):
                    options = [trees(child, a, b) for child, (a, b) in zip(rule.rhs, bounds)]
                    if not all(options):
                        continue
                    for children in itertools.product(*options):
                        found.append(ParseTree.apply(rule, children))
                        check(len(found))
            memo[key] = found
            return found

        return trees(Symbol.nonterminal(g.start), 0, len(w))

    @staticmethod
    def _splits(i: int, j: int, parts: int):
        """Ways to cut [i, j) into `parts` non-empty consecutive spans"""
        for cuts in itertools.combinations(range(i + 1, j), parts - 1):
            edges = (i, *cuts, j)
            yield list(zip(edges, edges[1:]))
