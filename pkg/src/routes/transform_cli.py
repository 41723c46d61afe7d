"""
轉換指令
transform remove-cycles / to-cnf, p-epsilon and consistency
"""

from pathlib import Path

import typer

from src.routes.output import emit_json
from src.services.derivation_service import DerivationService
from src.services.grammar_service import GrammarService
from src.services.transform_service import TransformService

transform_cli = typer.Typer()
transform_app = typer.Typer(help='Grammar transformations that keep the string distribution.')

grammar_service = GrammarService()
derivation_service = DerivationService()
transform_service = TransformService()


@transform_app.command('remove-cycles')
def remove_cycles(
    file: Path = typer.Argument(..., help='Grammar file'),
    out: Path = typer.Option(..., '-o', '--out', help='Where to write the transformed grammar'),
):
    """Remove linear cycles; print the cycles found in the input."""
    grammar = grammar_service.load_grammar(file)
    report = transform_service.find_linear_cycles(grammar)
    transformed = transform_service.remove_linear_cycles(grammar)
    out.write_text(grammar_service.serialize(transformed), encoding='utf-8')
    emit_json(report.to_dict())


@transform_app.command('to-cnf')
def to_cnf(
    file: Path = typer.Argument(..., help='Grammar file'),
    out: Path = typer.Option(..., '-o', '--out', help='Where to write the CNF grammar'),
):
    """Convert to Chomsky normal form; print the introduced nonterminals."""
    grammar = grammar_service.load_grammar(file)
    result = derivation_service.to_cnf(grammar)
    out.write_text(grammar_service.serialize(result.grammar), encoding='utf-8')
    emit_json(result.to_dict())


@transform_cli.command('p-epsilon')
def p_epsilon(
    file: Path = typer.Argument(..., help='Grammar file'),
    nonterminal: str = typer.Option(..., '--nonterminal', help='Nonterminal A'),
    tol: float = typer.Option(1e-12, '--tol', help='Stop when iterates change by less than this'),
):
    """Probability that A derives the empty string."""
    grammar = grammar_service.load_grammar(file)
    emit_json({'p_epsilon': transform_service.p_epsilon(grammar, nonterminal, tol)})


@transform_cli.command()
def consistency(
    file: Path = typer.Argument(..., help='Grammar file'),
    samples: int = typer.Option(..., '--samples', min=1),
    max_steps: int = typer.Option(..., '--max-steps', min=1),
    seed: int = typer.Option(..., '--seed'),
):
    """Termination probability: fixed point and Monte-Carlo estimate."""
    grammar = grammar_service.load_grammar(file)
    report = transform_service.consistency_estimate(grammar, samples, max_steps, seed)
    data = report.to_dict()
    emit_json({key: data[key] for key in ('fixed_point', 'monte_carlo', 'halfwidth')})
