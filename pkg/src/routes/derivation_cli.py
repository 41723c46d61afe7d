"""
推導指令
sample and prob-string
"""

from pathlib import Path
from typing import Optional

import typer

from src.routes.output import emit_json
from src.services.derivation_service import DerivationService, tokenize
from src.services.grammar_service import GrammarService

derivation_cli = typer.Typer()

grammar_service = GrammarService()
derivation_service = DerivationService()


@derivation_cli.command()
def sample(
    file: Path = typer.Argument(..., help='Grammar file'),
    count: int = typer.Option(..., '--count', min=1, help='Number of derivations'),
    max_steps: int = typer.Option(..., '--max-steps', min=1, help='Rule applications before a run counts as non-terminated'),
    seed: int = typer.Option(..., '--seed', help='Generator seed'),
    top: Optional[int] = typer.Option(None, '--top', min=1, help='Keep only the most frequent strings'),
):
    """Sample leftmost derivations and report string frequencies."""
    grammar = grammar_service.load_grammar(file)
    report = derivation_service.sample(grammar, count, max_steps, seed)
    emit_json(report.to_dict(top))


@derivation_cli.command('prob-string')
def prob_string(
    file: Path = typer.Argument(..., help='Grammar file'),
    tokens: str = typer.Option(..., '--tokens', help='Space-separated terminal names'),
):
    """Probability of one terminal string, summed over its parse trees."""
    grammar = grammar_service.load_grammar(file)
    w = tokenize(tokens)
    result = {'probability': derivation_service.string_probability(grammar, w)}
    unknown = derivation_service.unknown_tokens(grammar, w)
    if unknown:
        result['unknown_tokens'] = unknown
    emit_json(result)
