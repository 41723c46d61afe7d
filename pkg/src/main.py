import os
import sys
# allow `python src/main.py ...`
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import logging
from typing import List, Optional

import click
import coloredlogs
import typer
from pydantic import ValidationError

from src.models.errors import PcfgError
from src.routes.derivation_cli import derivation_cli
from src.routes.expression_cli import expression_cli
from src.routes.grammar_cli import grammar_cli
from src.routes.output import emit_error
from src.routes.regression_cli import regression_cli
from src.routes.transform_cli import transform_app, transform_cli
from src.services.config_service import EngineConfig

LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'

# exit codes: 0 success, 1 usage, 2 input, 3 numeric guard
EXIT_USAGE = 1
EXIT_INPUT = 2

app = typer.Typer(
    help='Probabilities of expressions under probabilistic context-free grammars.',
    pretty_exceptions_enable=False,
    add_completion=False,
    no_args_is_help=True,
)

# 註冊指令群組
for group in (grammar_cli, derivation_cli, transform_cli, expression_cli, regression_cli):
    app.registered_commands.extend(group.registered_commands)
app.add_typer(transform_app, name='transform')


@app.callback()
def configure(verbose: bool = typer.Option(False, '--verbose', '-v', help='Debug logging on standard error')):
    """設定日誌"""
    level = logging.DEBUG if verbose else EngineConfig.LOG_LEVEL
    coloredlogs.install(level=level, stream=sys.stderr, fmt=LOG_FORMAT)
    logging.getLogger(__name__).debug('engine config: %s', EngineConfig.as_dict())


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command and map failures to exit codes

    Args:
        argv: arguments without the program name; defaults to sys.argv[1:]

    Returns:
        process exit code
    """
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        result = app(args=args, standalone_mode=False, prog_name='pcfg-expr')
    except click.UsageError as e:
        emit_error('UsageError', e.format_message())
        return EXIT_USAGE
    except click.Abort:
        emit_error('Aborted', 'interrupted')
        return EXIT_USAGE
    except click.ClickException as e:
        emit_error(type(e).__name__, e.format_message())
        return EXIT_INPUT
    except PcfgError as e:
        logging.getLogger(__name__).debug('command failed', exc_info=True)
        emit_error(type(e).__name__, e.message)
        return e.exit_code
    except ValidationError as e:
        emit_error('ValidationError', '; '.join(err['msg'] for err in e.errors()))
        return EXIT_INPUT
    except (OSError, ValueError) as e:
        emit_error(type(e).__name__, e)
        return EXIT_INPUT
    # --help and friends come back as an exit code
    return result if isinstance(result, int) else 0


if __name__ == '__main__':
    sys.exit(main())
