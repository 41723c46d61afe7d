"""
運算式機率指令
prob-expr and report-terms
"""

from pathlib import Path
from typing import Optional

import click
import typer

from src.models.expression import INT64_MAX, ApproxReport
from src.routes.output import emit_json
from src.services.expression_service import ExpressionService
from src.services.grammar_service import GrammarService
from src.services.probability_service import ProbabilityService

expression_cli = typer.Typer()

grammar_service = GrammarService()
expression_service = ExpressionService()
probability_service = ProbabilityService()


def _family_and_class(file: Path, expr: str):
    grammar = grammar_service.load_grammar(file)
    family = grammar_service.require_family(grammar)
    return family, expression_service.parse_expression(family, expr)


@expression_cli.command('prob-expr')
def prob_expr(
    file: Path = typer.Argument(..., help='Grammar file'),
    expr: str = typer.Option(..., '--expr', help='Expression, e.g. "c + c*x1"'),
    exact: bool = typer.Option(False, '--exact', help='Exact value (default)'),
    epsilon: Optional[float] = typer.Option(None, '--epsilon', help='Absolute error budget for the approximation'),
):
    """Probability of an expression class."""
    if exact and epsilon is not None:
        raise click.UsageError('--exact and --epsilon are mutually exclusive')
    family, cls = _family_and_class(file, expr)
    result = probability_service.expression_probability(family, cls, epsilon)
    emit_json({'probability': result} if epsilon is None else result.to_dict())


@expression_cli.command('report-terms')
def report_terms(
    file: Path = typer.Argument(..., help='Grammar file'),
    expr: str = typer.Option(..., '--expr'),
    epsilon: float = typer.Option(..., '--epsilon'),
    csv: Path = typer.Option(..., '--csv', help='Output CSV of (i, included, total)'),
):
    """Write the per-iteration term counts of the approximation."""
    family, cls = _family_and_class(file, expr)
    report = probability_service.expression_probability(family, cls, epsilon)
    path = probability_service.write_terms_csv(report, csv)
    emit_json({
        'csv': str(path),
        'included': _json_count(_count(report, 'included_terms')),
        'total': _json_count(_count(report, 'total_terms')),
    })


def _count(report: ApproxReport, attr: str) -> int:
    if report.components:
        return sum(getattr(component, attr) for component in report.components.values())
    return getattr(report, attr)


def _json_count(n: int):
    return n if n <= INT64_MAX else float(n)
