"""
文法資料模型
Symbols, rules, probabilistic grammars, validation reports and grammar families
"""

from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator


class SymbolKind(str, Enum):
    TERMINAL = 'terminal'
    NONTERMINAL = 'nonterminal'


class Symbol(BaseModel):
    """文法符號"""

    model_config = ConfigDict(frozen=True)

    kind: SymbolKind
    name: str = Field(min_length=1)

    @classmethod
    def terminal(cls, name: str) -> 'Symbol':
        return cls(kind=SymbolKind.TERMINAL, name=name)

    @classmethod
    def nonterminal(cls, name: str) -> 'Symbol':
        return cls(kind=SymbolKind.NONTERMINAL, name=name)

    @property
    def is_terminal(self) -> bool:
        return self.kind is SymbolKind.TERMINAL

    def __str__(self):
        if self.is_terminal:
            escaped = self.name.replace('\\', '\\\\').replace("'", "\\'")
            return f"'{escaped}'"
        return self.name


class Rule(BaseModel):
    """產生規則 lhs -> rhs [probability]"""

    model_config = ConfigDict(frozen=True)

    lhs: str
    rhs: Tuple[Symbol, ...] = ()
    probability: float

    @property
    def is_null(self) -> bool:
        return len(self.rhs) == 0

    @property
    def is_unit(self) -> bool:
        """A -> B with B a nonterminal"""
        return len(self.rhs) == 1 and not self.rhs[0].is_terminal

    def rhs_names(self) -> Tuple[str, ...]:
        return tuple(symbol.name for symbol in self.rhs)

    def __str__(self):
        parts = [self.lhs, '->', *(str(symbol) for symbol in self.rhs), f'[{self.probability:.17g}]']
        return ' '.join(parts)


class Pcfg(BaseModel):
    """
    機率上下文無關文法

    Nonterminals are the start symbol plus every left-hand side, in order of
    first appearance; terminals are the quoted literals in rule order. Values
    are immutable, so the per-lhs index is built once.
    """

    model_config = ConfigDict(frozen=True)

    start: str
    rules: Tuple[Rule, ...]

    _by_lhs: Dict[str, Tuple[Rule, ...]] = PrivateAttr(default_factory=dict)
    _nonterminals: Tuple[str, ...] = PrivateAttr(default=())
    _terminals: Tuple[str, ...] = PrivateAttr(default=())

    def model_post_init(self, __context):
        by_lhs: Dict[str, List[Rule]] = {}
        nonterminals = [self.start]
        terminals: List[str] = []
        for rule in self.rules:
            by_lhs.setdefault(rule.lhs, []).append(rule)
            if rule.lhs not in nonterminals:
                nonterminals.append(rule.lhs)
            for symbol in rule.rhs:
                if symbol.is_terminal and symbol.name not in terminals:
                    terminals.append(symbol.name)
        self._by_lhs = {lhs: tuple(rules) for lhs, rules in by_lhs.items()}
        self._nonterminals = tuple(nonterminals)
        self._terminals = tuple(terminals)

    @property
    def nonterminals(self) -> Tuple[str, ...]:
        return self._nonterminals

    @property
    def terminals(self) -> Tuple[str, ...]:
        return self._terminals

    def rules_for(self, lhs: str) -> Tuple[Rule, ...]:
        """取得指定非終端符號的規則"""
        return self._by_lhs.get(lhs, ())

    def has_null_rules(self) -> bool:
        return any(rule.is_null for rule in self.rules)

    def rhs_nonterminals(self) -> Tuple[str, ...]:
        seen: List[str] = []
        for rule in self.rules:
            for symbol in rule.rhs:
                if not symbol.is_terminal and symbol.name not in seen:
                    seen.append(symbol.name)
        return tuple(seen)

    def with_rules(self, rules) -> 'Pcfg':
        return Pcfg(start=self.start, rules=tuple(rules))


class ValidationReport(BaseModel):
    """文法驗證報告"""

    errors: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self):
        """轉換為字典格式"""
        return {'errors': list(self.errors), 'warnings': list(self.warnings)}


# ---------------------------------------------------------------------------
# Grammar families with known expression-probability algorithms


class FamilyKind(str, Enum):
    LINEAR = 'linear'
    POLYNOMIAL = 'polynomial'
    RATIONAL = 'rational'
    ALT_LINEAR = 'alt-linear'


def _check_distribution(values, tolerance: float = 1e-9):
    if not values:
        raise ValueError('at least one variable is required')
    if any(value < 0 for value in values):
        raise ValueError('variable probabilities must be non-negative')
    total = sum(values)
    if abs(total - 1.0) > tolerance:
        raise ValueError(f'variable probabilities sum to {total!r}, expected 1')


class LinearParams(BaseModel):
    """E -> E + c V [p] | c [1-p];  V -> x1 [q1] | ... | xn [qn]"""

    model_config = ConfigDict(frozen=True)

    p: float = Field(gt=0.0, lt=1.0)
    q: Tuple[float, ...]

    @model_validator(mode='after')
    def _check_q(self):
        _check_distribution(self.q)
        return self

    @property
    def n(self) -> int:
        return len(self.q)


class PolyParams(BaseModel):
    """E -> E + c V [p] | c [1-p];  V -> V F [q] | F [1-q];  F -> x1 [q1] | ... | xn [qn]"""

    model_config = ConfigDict(frozen=True)

    p: float = Field(gt=0.0, lt=1.0)
    q: float = Field(gt=0.0, lt=1.0)
    qv: Tuple[float, ...]

    @model_validator(mode='after')
    def _check_qv(self):
        _check_distribution(self.qv)
        return self

    @property
    def n(self) -> int:
        return len(self.qv)


class AltLinearParams(BaseModel):
    """
    S -> V1 + c [p0] | c [1-p0]
    Vi -> V(i+1) + c xi [pi] | V(i+1) [qi] | c xi [1-pi-qi]   for i < n
    Vn -> c xn [1]
    """

    model_config = ConfigDict(frozen=True)

    p0: float = Field(gt=0.0, le=1.0)
    branch: Tuple[Tuple[float, float], ...] = ()

    @model_validator(mode='after')
    def _check_branch(self):
        for index, (p_i, q_i) in enumerate(self.branch, start=1):
            if p_i < 0 or q_i < 0 or 1.0 - p_i - q_i < -1e-12:
                raise ValueError(f'invalid branch probabilities for V{index}: ({p_i}, {q_i})')
        return self

    @property
    def n(self) -> int:
        return len(self.branch) + 1


FamilyParams = Union[LinearParams, PolyParams, AltLinearParams]


class GrammarFamily(BaseModel):
    """
    A grammar recognised as one of the four templates

    `variables[i - 1]` is the terminal standing for variable x_i; `roles` maps
    template roles (E, V, F, S, V1...) to the grammar's own nonterminal names.
    """

    model_config = ConfigDict(frozen=True)

    kind: FamilyKind
    params: FamilyParams
    variables: Tuple[str, ...]
    roles: Dict[str, str] = Field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def p(self) -> Optional[float]:
        return getattr(self.params, 'p', None)

    def variable_index(self, name: str) -> Optional[int]:
        try:
            return self.variables.index(name) + 1
        except ValueError:
            return None

    def to_dict(self):
        """轉換為字典格式"""
        return {
            'family': self.kind.value,
            'variables': list(self.variables),
            'roles': dict(self.roles),
            'params': self.params.model_dump(mode='json'),
        }
