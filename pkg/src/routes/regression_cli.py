"""
符號迴歸指令
fit
"""

from pathlib import Path

import typer

from src.routes.output import emit_json
from src.services.grammar_service import GrammarService
from src.services.regression_service import RegressionService

regression_cli = typer.Typer()

grammar_service = GrammarService()
regression_service = RegressionService()


@regression_cli.command()
def fit(
    grammar_file: Path = typer.Argument(..., help='Grammar file'),
    data: Path = typer.Option(..., '--data', help='CSV with header x1,...,xn,y'),
    count: int = typer.Option(..., '--count', min=1),
    seed: int = typer.Option(..., '--seed'),
    max_steps: int = typer.Option(1000, '--max-steps', min=1),
):
    """Sample candidates, fit their constants and print them ranked."""
    grammar = grammar_service.load_grammar(grammar_file)
    dataset = regression_service.load_dataset(data)
    candidates = regression_service.run_search(grammar, dataset, count, seed, max_steps)
    emit_json([candidate.to_dict() for candidate in candidates])
