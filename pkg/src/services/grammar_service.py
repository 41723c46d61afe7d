"""
文法服務
Parse, serialize and validate grammar files, and recognise the grammar families
whose expression probabilities have known algorithms
"""

import logging
import math
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import networkx as nx
from pydantic import ValidationError

from src.models.errors import GrammarSyntaxError, GrammarValidationError, UnsupportedGrammarError
from src.models.grammar import (
    AltLinearParams,
    FamilyKind,
    GrammarFamily,
    LinearParams,
    Pcfg,
    PolyParams,
    Rule,
    Symbol,
    ValidationReport,
)
from src.services.config_service import EngineConfig

logger = logging.getLogger(__name__)

NONTERMINAL_PATTERN = re.compile(r'[A-Z][A-Za-z0-9_]*')
PROBABILITY_PATTERN = re.compile(r'[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?')
START_PATTERN = re.compile(r'start\s*:')
VARIABLE_PATTERN = re.compile(r'x(\d+)')

# terminals reserved by the family templates
OPERATOR_TERMINALS = frozenset({'+', 'c', '(', ')', '/'})


def variable_sort_key(name: str):
    """x<digits> by number first, anything else by name"""
    match = VARIABLE_PATTERN.fullmatch(name)
    if match:
        return (0, int(match.group(1)), name)
    return (1, 0, name)


def unit_rule_graph(g: Pcfg) -> nx.DiGraph:
    """Directed graph of unit rules A -> B with positive probability"""
    graph = nx.DiGraph()
    graph.add_nodes_from(g.nonterminals)
    for rule in g.rules:
        if rule.is_unit and rule.probability > 0:
            graph.add_edge(rule.lhs, rule.rhs[0].name)
    return graph


def canonical_cycle(cycle: List[str]) -> Tuple[str, ...]:
    """Rotate a cycle so that it starts at its smallest name"""
    pivot = cycle.index(min(cycle))
    return tuple(cycle[pivot:] + cycle[:pivot])


def linear_cycles(g: Pcfg) -> List[Tuple[str, ...]]:
    """All simple unit-rule cycles, longest first, ties in name order"""
    cycles = {canonical_cycle(list(cycle)) for cycle in nx.simple_cycles(unit_rule_graph(g))}
    return sorted(cycles, key=lambda cycle: (-len(cycle), cycle))


def format_cycle(cycle: Iterable[str]) -> str:
    names = list(cycle)
    return ' -> '.join(names + names[:1])


class _LineScanner:
    """Tokenizer for one grammar file line"""

    def __init__(self, text: str, line_no: int):
        self.text = text
        self.line_no = line_no
        self.pos = 0

    def error(self, message: str, pos: Optional[int] = None) -> GrammarSyntaxError:
        column = (self.pos if pos is None else pos) + 1
        return GrammarSyntaxError(message, self.line_no, column)

    def skip_space(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def at_end(self) -> bool:
        self.skip_space()
        return self.pos >= len(self.text) or self.text[self.pos] == '#'

    def read_nonterminal(self) -> str:
        self.skip_space()
        match = NONTERMINAL_PATTERN.match(self.text, self.pos)
        if not match:
            raise self.error('expected a nonterminal name')
        end = match.end()
        if end < len(self.text) and not self.text[end].isspace() and self.text[end] not in "'[#-":
            raise self.error(f'invalid character {self.text[end]!r} in nonterminal name', end)
        self.pos = end
        return match.group(0)

    def read_terminal(self) -> str:
        start = self.pos
        self.pos += 1
        chars = []
        while True:
            if self.pos >= len(self.text):
                raise self.error('unterminated terminal literal', start)
            char = self.text[self.pos]
            if char == '\\':
                if self.pos + 1 >= len(self.text) or self.text[self.pos + 1] not in "'\\":
                    raise self.error('unknown escape in terminal literal')
                chars.append(self.text[self.pos + 1])
                self.pos += 2
                continue
            if char == "'":
                self.pos += 1
                break
            chars.append(char)
            self.pos += 1
        name = ''.join(chars)
        if not name:
            raise self.error('empty terminal literal', start)
        if any(ch.isspace() for ch in name):
            raise self.error('whitespace inside terminal literal', start)
        return name

    def read_probability(self) -> float:
        start = self.pos
        self.pos += 1
        self.skip_space()
        match = PROBABILITY_PATTERN.match(self.text, self.pos)
        if not match:
            raise self.error('expected a decimal probability')
        self.pos = match.end()
        self.skip_space()
        if self.pos >= len(self.text) or self.text[self.pos] != ']':
            raise self.error("expected ']' after probability")
        self.pos += 1
        if not self.at_end():
            raise self.error('unexpected text after probability')
        value = float(match.group(0))
        if math.isnan(value):
            raise self.error('probability is not a number', start)
        return value


class GrammarService:
    """文法服務"""

    def __init__(self, config=EngineConfig):
        self.config = config

    # ------------------------------------------------------------------
    # text format

    def parse_grammar(self, text: str) -> Pcfg:
        """
        Parse grammar file text

        Args:
            text: grammar text, one rule per line

        Returns:
            Pcfg with rules in file order (not validated)
        """
        start: Optional[str] = None
        rules: List[Rule] = []
        seen_content = False

        for line_no, line in enumerate(text.splitlines(), start=1):
            scanner = _LineScanner(line, line_no)
            if scanner.at_end():
                continue

            start_match = START_PATTERN.match(line, scanner.pos)
            if start_match:
                if start is not None:
                    raise scanner.error('duplicate start declaration')
                if seen_content:
                    raise scanner.error('start declaration must be the first non-comment line')
                scanner.pos = start_match.end()
                start = scanner.read_nonterminal()
                if not scanner.at_end():
                    raise scanner.error('unexpected text after start declaration')
                seen_content = True
                continue

            seen_content = True
            lhs = scanner.read_nonterminal()
            scanner.skip_space()
            if not line.startswith('->', scanner.pos):
                raise scanner.error("expected '->'")
            scanner.pos += 2

            rhs: List[Symbol] = []
            probability = None
            while probability is None:
                if scanner.at_end():
                    raise scanner.error("missing '[probability]'")
                char = line[scanner.pos]
                if char == "'":
                    rhs.append(Symbol.terminal(scanner.read_terminal()))
                elif char == '[':
                    probability = scanner.read_probability()
                else:
                    rhs.append(Symbol.nonterminal(scanner.read_nonterminal()))
            rules.append(Rule(lhs=lhs, rhs=tuple(rhs), probability=probability))

        if start is None:
            if not rules:
                raise GrammarSyntaxError('grammar has no rules', 1, 1)
            start = rules[0].lhs
        logger.debug('parsed grammar: start=%s, %d rules', start, len(rules))
        return Pcfg(start=start, rules=tuple(rules))

    def serialize(self, g: Pcfg) -> str:
        """Grammar file text; rules in stored order, 17 significant digits"""
        lines = [f'start: {g.start}']
        lines.extend(str(rule) for rule in g.rules)
        return '\n'.join(lines) + '\n'

    def load_grammar(self, path, validate: bool = True) -> Pcfg:
        """
        Read and parse a grammar file

        Raises:
            GrammarValidationError: validate is set and the report has errors
        """
        text = Path(path).read_text(encoding='utf-8')
        grammar = self.parse_grammar(text)
        if validate:
            report = self.validate(grammar)
            for warning in report.warnings:
                logger.warning('%s: %s', path, warning)
            if not report.ok:
                raise GrammarValidationError('; '.join(report.errors), detail=report)
        return grammar

    # ------------------------------------------------------------------
    # validation

    def validate(self, g: Pcfg) -> ValidationReport:
        """Structural and probabilistic checks; never raises"""
        report = ValidationReport()
        lhs_names = {rule.lhs for rule in g.rules}

        for rule in g.rules:
            if not 0.0 <= rule.probability <= 1.0:
                report.errors.append(f'probability {rule.probability!r} of rule {rule} outside [0, 1]')

        for name in g.nonterminals:
            rules = g.rules_for(name)
            if not rules:
                report.errors.append(f'nonterminal {name} has no rules')
                continue
            total = math.fsum(rule.probability for rule in rules)
            if abs(total - 1.0) > self.config.SUM_TOLERANCE:
                report.errors.append(f'probabilities for {name} sum to {total:.12g}')

        reported = set()
        for rule in g.rules:
            for symbol in rule.rhs:
                if not symbol.is_terminal and symbol.name not in lhs_names and symbol.name not in reported:
                    reported.add(symbol.name)
                    report.errors.append(f'undeclared symbol {symbol.name} in rule {rule}')

        for name in sorted(set(g.terminals) & set(g.nonterminals)):
            report.errors.append(f'{name} is used both as a terminal and as a nonterminal')

        reachable = self.reachable(g)
        for name in g.nonterminals:
            if name not in reachable:
                report.warnings.append(f'nonterminal {name} is unreachable from {g.start}')

        productive = self.productive(g)
        for name in g.nonterminals:
            if name in lhs_names and name not in productive:
                report.warnings.append(f'nonterminal {name} derives no terminal string')

        for rule in g.rules:
            if rule.is_null:
                report.warnings.append(f'null rule {rule}')

        for cycle in linear_cycles(g):
            report.warnings.append(f'linear cycle {format_cycle(cycle)}')

        return report

    def reachable(self, g: Pcfg) -> set:
        """非終端符號可達集合"""
        seen = {g.start}
        stack = [g.start]
        while stack:
            name = stack.pop()
            for rule in g.rules_for(name):
                for symbol in rule.rhs:
                    if not symbol.is_terminal and symbol.name not in seen:
                        seen.add(symbol.name)
                        stack.append(symbol.name)
        return seen

    def productive(self, g: Pcfg) -> set:
        """Nonterminals deriving at least one terminal string (positive-probability rules)"""
        productive = set()
        changed = True
        while changed:
            changed = False
            for rule in g.rules:
                if rule.lhs in productive or rule.probability <= 0:
                    continue
                if all(symbol.is_terminal or symbol.name in productive for symbol in rule.rhs):
                    productive.add(rule.lhs)
                    changed = True
        return productive

    # ------------------------------------------------------------------
    # family recognition

    def classify_family(self, g: Pcfg) -> Optional[GrammarFamily]:
        """
        Match the grammar against the linear, polynomial, rational and alt-linear templates

        Returns:
            GrammarFamily, or None when no template fits
        """
        try:
            for matcher in (self._match_linear, self._match_polynomial, self._match_rational, self._match_alt_linear):
                family = matcher(g)
                if family is not None:
                    logger.debug('grammar classified as %s', family.kind.value)
                    return family
        except ValidationError as e:
            logger.debug('template matched but parameters rejected: %s', e)
        return None

    def require_family(self, g: Pcfg) -> GrammarFamily:
        family = self.classify_family(g)
        if family is None:
            raise UnsupportedGrammarError(
                'grammar matches none of the supported templates (linear, polynomial, rational, '
                'alt-linear); computing expression probabilities for general grammars is '
                'undecidable, so no algorithm is attempted'
            )
        return family

    @staticmethod
    def _live_rules(g: Pcfg, name: str) -> Tuple[Rule, ...]:
        return tuple(rule for rule in g.rules_for(name) if rule.probability > 0)

    @staticmethod
    def _shape(rule: Rule) -> Tuple[str, ...]:
        """Rule body with nonterminals as '<N>' placeholders"""
        return tuple(symbol.name if symbol.is_terminal else '<N>' for symbol in rule.rhs)

    def _match_sum_rules(self, g: Pcfg, e_name: str) -> Optional[Tuple[float, str]]:
        """E -> E '+' 'c' V [p] | 'c' [1-p]; returns (p, V)"""
        rules = self._live_rules(g, e_name)
        if len(rules) != 2:
            return None
        recursive = [r for r in rules if self._shape(r) == ('<N>', '+', 'c', '<N>')]
        stop = [r for r in rules if self._shape(r) == ('c',)]
        if len(recursive) != 1 or len(stop) != 1:
            return None
        rule = recursive[0]
        if rule.rhs[0].name != e_name or rule.rhs[3].name == e_name:
            return None
        return rule.probability, rule.rhs[3].name

    def _match_variables(self, g: Pcfg, name: str) -> Optional[Tuple[Tuple[str, ...], Tuple[float, ...]]]:
        """V -> 'x1' [q1] | ... ; variables in natural order"""
        rules = g.rules_for(name)
        if not rules or any(len(r.rhs) != 1 or not r.rhs[0].is_terminal for r in rules):
            return None
        names = [r.rhs[0].name for r in rules]
        if len(set(names)) != len(names) or OPERATOR_TERMINALS & set(names):
            return None
        weights = dict(zip(names, (r.probability for r in rules)))
        ordered = tuple(sorted(names, key=variable_sort_key))
        return ordered, tuple(weights[v] for v in ordered)

    def _match_linear(self, g: Pcfg, e_name: Optional[str] = None) -> Optional[GrammarFamily]:
        e_name = e_name or g.start
        head = self._match_sum_rules(g, e_name)
        if head is None:
            return None
        p, v_name = head
        if set(g.nonterminals) != {e_name, v_name}:
            return None
        variables = self._match_variables(g, v_name)
        if variables is None:
            return None
        names, q = variables
        return GrammarFamily(
            kind=FamilyKind.LINEAR,
            params=LinearParams(p=p, q=q),
            variables=names,
            roles={'E': e_name, 'V': v_name},
        )

    def _match_product(self, g: Pcfg, e_name: str) -> Optional[Tuple[float, float, Dict[str, str], Tuple[str, ...], Tuple[float, ...]]]:
        head = self._match_sum_rules(g, e_name)
        if head is None:
            return None
        p, v_name = head
        rules = self._live_rules(g, v_name)
        if len(rules) != 2:
            return None
        grow = [r for r in rules if self._shape(r) == ('<N>', '<N>')]
        leaf = [r for r in rules if self._shape(r) == ('<N>',)]
        if len(grow) != 1 or len(leaf) != 1:
            return None
        f_name = leaf[0].rhs[0].name
        if grow[0].rhs_names() != (v_name, f_name) or f_name in (v_name, e_name):
            return None
        variables = self._match_variables(g, f_name)
        if variables is None:
            return None
        names, qv = variables
        roles = {'E': e_name, 'V': v_name, 'F': f_name}
        return p, grow[0].probability, roles, names, qv

    def _match_polynomial(self, g: Pcfg) -> Optional[GrammarFamily]:
        matched = self._match_product(g, g.start)
        if matched is None:
            return None
        p, q, roles, names, qv = matched
        if set(g.nonterminals) != set(roles.values()):
            return None
        return GrammarFamily(
            kind=FamilyKind.POLYNOMIAL,
            params=PolyParams(p=p, q=q, qv=qv),
            variables=names,
            roles=roles,
        )

    def _match_rational(self, g: Pcfg) -> Optional[GrammarFamily]:
        rules = self._live_rules(g, g.start)
        if len(rules) != 1:
            return None
        rule = rules[0]
        if self._shape(rule) != ('(', '<N>', ')', '/', '(', '<N>', ')'):
            return None
        e_name = rule.rhs[1].name
        if rule.rhs[5].name != e_name or e_name == g.start:
            return None
        matched = self._match_product(g, e_name)
        if matched is None:
            return None
        p, q, roles, names, qv = matched
        roles = {'S': g.start, **roles}
        if set(g.nonterminals) != set(roles.values()):
            return None
        return GrammarFamily(
            kind=FamilyKind.RATIONAL,
            params=PolyParams(p=p, q=q, qv=qv),
            variables=names,
            roles=roles,
        )

    def _match_alt_linear(self, g: Pcfg) -> Optional[GrammarFamily]:
        rules = self._live_rules(g, g.start)
        head = [r for r in rules if self._shape(r) == ('<N>', '+', 'c')]
        stop = [r for r in rules if self._shape(r) == ('c',)]
        if len(head) != 1 or len(stop) > 1 or len(head) + len(stop) != len(rules):
            return None
        p0 = head[0].probability
        current = head[0].rhs[0].name

        chain: List[str] = []
        variables: List[str] = []
        branch: List[Tuple[float, float]] = []
        while True:
            if current in chain or current == g.start:
                return None
            chain.append(current)
            link = self._match_chain_link(g, current)
            if link is None:
                return None
            variable, successor, p_i, q_i = link
            variables.append(variable)
            if successor is None:
                break
            branch.append((p_i, q_i))
            current = successor

        if len(set(variables)) != len(variables) or OPERATOR_TERMINALS & set(variables):
            return None
        if set(g.nonterminals) != {g.start, *chain}:
            return None
        roles = {'S': g.start}
        roles.update({f'V{i}': name for i, name in enumerate(chain, start=1)})
        return GrammarFamily(
            kind=FamilyKind.ALT_LINEAR,
            params=AltLinearParams(p0=p0, branch=tuple(branch)),
            variables=tuple(variables),
            roles=roles,
        )

    def _match_chain_link(self, g: Pcfg, name: str) -> Optional[Tuple[str, Optional[str], float, float]]:
        """V_i rules; returns (x_i, V_(i+1) or None, p_i, q_i)"""
        rules = self._live_rules(g, name)
        if not rules:
            return None
        variable = None
        successor = None
        p_i = q_i = 0.0
        shapes = set()
        for rule in rules:
            shape = self._shape(rule)
            if shape in shapes:
                return None
            shapes.add(shape)
            if len(shape) == 4 and shape[0] == '<N>' and shape[1:3] == ('+', 'c') and shape[3] != '<N>':
                found_successor, found_variable = rule.rhs[0].name, shape[3]
                p_i = rule.probability
            elif shape == ('<N>',):
                found_successor, found_variable = rule.rhs[0].name, None
                q_i = rule.probability
            elif len(shape) == 2 and shape[0] == 'c' and shape[1] != '<N>':
                found_successor, found_variable = None, shape[1]
            else:
                return None
            if found_successor is not None:
                if successor not in (None, found_successor):
                    return None
                successor = found_successor
            if found_variable is not None:
                if variable not in (None, found_variable):
                    return None
                variable = found_variable
        if variable is None:
            return None
        return variable, successor, p_i, q_i
