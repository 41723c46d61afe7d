"""
運算式資料模型
Canonical expression classes and approximation reports
"""

from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

INT64_MAX = 2 ** 63 - 1


class LinearClass(BaseModel):
    """Class of c + c x_r1 + ... + c x_rk; the empty set is the class [c]"""

    model_config = ConfigDict(frozen=True)

    variables: Tuple[int, ...] = ()

    @field_validator('variables')
    @classmethod
    def _sorted_unique(cls, value):
        if any(index < 1 for index in value):
            raise ValueError('variable indices start at 1')
        return tuple(sorted(set(value)))

    @property
    def k(self) -> int:
        return len(self.variables)

    def to_json(self):
        return list(self.variables)


class MonomialKey(BaseModel):
    """x_i1^m1 * ... as sorted (index, exponent) pairs"""

    model_config = ConfigDict(frozen=True)

    exponents: Tuple[Tuple[int, int], ...]

    @field_validator('exponents')
    @classmethod
    def _check_exponents(cls, value):
        if not value:
            raise ValueError('a monomial needs at least one variable')
        indices = [index for index, _ in value]
        if len(set(indices)) != len(indices):
            raise ValueError('variable indices of a monomial must be distinct')
        if any(index < 1 for index in indices):
            raise ValueError('variable indices start at 1')
        if any(exponent < 1 for _, exponent in value):
            raise ValueError('exponents must be at least 1')
        return tuple(sorted(value))

    @classmethod
    def of(cls, mapping: Dict[int, int]) -> 'MonomialKey':
        return cls(exponents=tuple(mapping.items()))

    @property
    def degree(self) -> int:
        return sum(exponent for _, exponent in self.exponents)

    def as_dict(self) -> Dict[int, int]:
        return dict(self.exponents)

    def to_json(self):
        return {str(index): exponent for index, exponent in self.exponents}


class PolynomialClass(BaseModel):
    """Set of distinct monomials; empty is the class [c]"""

    model_config = ConfigDict(frozen=True)

    monomials: Tuple[MonomialKey, ...] = ()

    @field_validator('monomials')
    @classmethod
    def _sorted_unique(cls, value):
        return tuple(sorted(set(value), key=lambda key: key.exponents))

    @property
    def k(self) -> int:
        return len(self.monomials)

    def to_json(self):
        return [monomial.to_json() for monomial in self.monomials]


class RationalClass(BaseModel):
    """(numerator)/(denominator), kept componentwise without simplification"""

    model_config = ConfigDict(frozen=True)

    numerator: PolynomialClass
    denominator: PolynomialClass

    def to_json(self):
        return {'num': self.numerator.to_json(), 'den': self.denominator.to_json()}


ExpressionClass = Union[LinearClass, PolynomialClass, RationalClass]


class IterationStats(BaseModel):
    """Per-iteration counters of the pruned series"""

    i: int
    included: int
    total: int
    gamma: float

    def to_dict(self):
        """轉換為字典格式"""
        return {
            'i': self.i,
            'included': self.included if self.included <= INT64_MAX else float(self.included),
            'total': self.total if self.total <= INT64_MAX else float(self.total),
            'gamma': self.gamma,
        }


class ApproxReport(BaseModel):
    """近似計算報告"""

    estimate: float = Field(ge=0.0, le=1.0)
    error_bound: float = Field(ge=0.0)
    M: int
    mbar: float = 0.0
    iterations: List[IterationStats] = Field(default_factory=list)
    components: Optional[Dict[str, 'ApproxReport']] = None

    @property
    def included_terms(self) -> int:
        return sum(stats.included for stats in self.iterations)

    @property
    def total_terms(self) -> int:
        return sum(stats.total for stats in self.iterations)

    def to_dict(self):
        """轉換為字典格式"""
        data = {
            'estimate': self.estimate,
            'error_bound': self.error_bound,
            'M': self.M,
            'mbar': self.mbar,
            'iterations': [stats.to_dict() for stats in self.iterations],
        }
        if self.components is not None:
            data['components'] = {name: report.to_dict() for name, report in self.components.items()}
        return data


ApproxReport.model_rebuild()
