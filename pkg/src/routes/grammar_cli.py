"""
文法指令
validate and classify
"""

from pathlib import Path

import typer

from src.models.errors import GrammarValidationError
from src.routes.output import emit_json
from src.services.grammar_service import GrammarService

grammar_cli = typer.Typer()

grammar_service = GrammarService()


@grammar_cli.command()
def validate(file: Path = typer.Argument(..., help='Grammar file')):
    """Print the validation report; exit 2 when it has errors."""
    grammar = grammar_service.parse_grammar(file.read_text(encoding='utf-8'))
    report = grammar_service.validate(grammar)
    emit_json(report.to_dict())
    if not report.ok:
        raise GrammarValidationError(f'{len(report.errors)} validation error(s) in {file}', detail=report)


@grammar_cli.command()
def classify(file: Path = typer.Argument(..., help='Grammar file')):
    """Print the recognised grammar family and its parameters."""
    family = grammar_service.classify_family(grammar_service.load_grammar(file))
    emit_json(family.to_dict() if family is not None else {'family': 'unsupported'})
