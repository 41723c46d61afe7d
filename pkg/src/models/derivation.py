"""
推導資料模型
Parse trees, sampling reports, CNF conversion results and grammar transform reports
"""

from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from src.models.grammar import Pcfg, Rule, Symbol


class ParseTree(BaseModel):
    """
    剖析樹

    Internal nodes carry the rule applied at them; their children follow the
    rule's right-hand side in order. Terminal leaves carry no rule.
    """

    model_config = ConfigDict(frozen=True)

    node: Symbol
    rule_applied: Optional[Rule] = None
    children: Tuple['ParseTree', ...] = ()

    @classmethod
    def leaf(cls, name: str) -> 'ParseTree':
        return cls(node=Symbol.terminal(name))

    @classmethod
    def apply(cls, rule: Rule, children) -> 'ParseTree':
        return cls(node=Symbol.nonterminal(rule.lhs), rule_applied=rule, children=tuple(children))

    def rules(self):
        """Rules applied in the tree, preorder"""
        if self.rule_applied is not None:
            yield self.rule_applied
        for child in self.children:
            yield from child.rules()

    def to_bracketed(self) -> str:
        if self.node.is_terminal:
            return self.node.name
        inside = ' '.join(child.to_bracketed() for child in self.children)
        return f'({self.node.name} {inside})' if inside else f'({self.node.name})'

    def __repr__(self):
        return f'<ParseTree {self.to_bracketed()}>'


ParseTree.model_rebuild()


class SampleReport(BaseModel):
    """抽樣報告"""

    samples: int
    terminated: int
    max_steps: int
    seed: int
    strings: Dict[str, float] = Field(default_factory=dict)

    @property
    def termination_rate(self) -> float:
        return self.terminated / self.samples

    def to_dict(self, top: Optional[int] = None):
        """轉換為字典格式"""
        items = list(self.strings.items())
        if top is not None:
            items = items[:top]
        return {
            'samples': self.samples,
            'terminated': self.terminated,
            'max_steps': self.max_steps,
            'seed': self.seed,
            'strings': dict(items),
        }


class CnfResult(BaseModel):
    """CNF grammar plus what each introduced nonterminal stands for"""

    grammar: Pcfg
    introduced: Dict[str, str] = Field(default_factory=dict)
    original_nonterminals: Tuple[str, ...] = ()

    def to_dict(self):
        """轉換為字典格式"""
        return {
            'start': self.grammar.start,
            'rules': len(self.grammar.rules),
            'introduced': dict(self.introduced),
        }


class CycleReport(BaseModel):
    """Linear cycles A1 -> ... -> Am -> A1 as name sequences"""

    cycles: List[Tuple[str, ...]] = Field(default_factory=list)

    @property
    def lengths(self) -> List[int]:
        return [len(cycle) for cycle in self.cycles]

    def to_dict(self):
        """轉換為字典格式"""
        return {'cycles': [list(cycle) for cycle in self.cycles], 'lengths': self.lengths}


class ConsistencyReport(BaseModel):
    """終止機率估計"""

    fixed_point: float
    monte_carlo: float
    halfwidth: float
    samples: int
    max_steps: int
    seed: int

    def to_dict(self):
        """轉換為字典格式"""
        return {
            'fixed_point': self.fixed_point,
            'monte_carlo': self.monte_carlo,
            'halfwidth': self.halfwidth,
            'samples': self.samples,
            'max_steps': self.max_steps,
            'seed': self.seed,
        }
