"""
迴歸資料模型
Datasets, linear-in-constants templates and ranked candidates
"""

from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Dataset(BaseModel):
    """Observations (x1..xn, y)"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    variables: Tuple[str, ...]
    x: np.ndarray
    y: np.ndarray

    @model_validator(mode='after')
    def _check_shape(self):
        if self.x.ndim != 2 or self.y.ndim != 1:
            raise ValueError('x must be a matrix and y a vector')
        if self.x.shape != (len(self.y), len(self.variables)):
            raise ValueError(f'x has shape {self.x.shape}, expected ({len(self.y)}, {len(self.variables)})')
        return self

    @classmethod
    def from_rows(cls, rows, variables=None) -> 'Dataset':
        """Rows of (x1, ..., xn, y)"""
        table = np.asarray(rows, dtype=float)
        if table.ndim != 2 or table.shape[1] < 1:
            raise ValueError('rows must be a non-empty table')
        n = table.shape[1] - 1
        names = tuple(variables) if variables is not None else tuple(f'x{i}' for i in range(1, n + 1))
        return cls(variables=names, x=table[:, :n], y=table[:, n])

    @property
    def rows(self) -> int:
        return len(self.y)

    def column(self, name: str) -> np.ndarray:
        return self.x[:, self.variables.index(name)]


class TemplateTerm(BaseModel):
    """One summand: optional constant times a product of variable powers"""

    model_config = ConfigDict(frozen=True)

    constant: Optional[int] = None
    powers: Tuple[Tuple[str, int], ...] = ()

    def evaluate(self, data: Dataset) -> np.ndarray:
        value = np.ones(data.rows)
        for name, exponent in self.powers:
            value = value * data.column(name) ** exponent
        return value


class Template(BaseModel):
    """Parsed template: numerator terms over a constant-free denominator"""

    model_config = ConfigDict(frozen=True)

    text: str
    terms: Tuple[TemplateTerm, ...]
    denominator: Tuple[TemplateTerm, ...] = ()
    constants: int = 0


class Candidate(BaseModel):
    """候選模型"""

    template: str
    string: str
    constants: List[float] = Field(default_factory=list)
    sse: float = Field(ge=0.0)
    prior: Optional[float] = None
    class_json: Optional[Any] = None
    expression: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """轉換為字典格式"""
        data = {
            'template': self.template,
            'constants': list(self.constants),
            'sse': self.sse,
            'prior': self.prior,
            'class': self.class_json,
        }
        if self.expression is not None:
            data['expression'] = self.expression
        data['string'] = self.string
        return data
