import functools
from typing import Annotated, Callable, Optional

import typer
from pydantic import ValidationError

from . import __version__
from .commands import data, evaluate, experiment, laplace, oracle, selftest
from .config import get_settings
from .errors import ConfigError, LocPrivError
from .utils.logging import get_logger, setup_logging


def translate_errors(func: Callable) -> Callable:
    """
    Run a command and turn package errors into their exit codes.
    Args:
        func: Command callback
    Returns:
        Wrapped callback with the same signature
    """
    logger = get_logger(__name__)

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except LocPrivError as exc:
            logger.error("Command failed", extra={
                "command": func.__name__,
                "error": str(exc),
                "error_type": type(exc).__name__,
                "exit_code": exc.exit_code,
            })
            raise typer.Exit(code=exc.exit_code) from exc
        except ValidationError as exc:
            # Invalid option values surface as model validation errors.
            logger.error("Invalid parameters", extra={
                "command": func.__name__,
                "error": str(exc),
                "error_type": "ConfigError",
                "exit_code": ConfigError.exit_code,
            })
            raise typer.Exit(code=ConfigError.exit_code) from exc

    wrapper.translates_errors = True
    return wrapper


def include_router(app: typer.Typer, router: typer.Typer) -> None:
    """Register the commands of a command module at the top level of `app`."""
    for command in router.registered_commands:
        if not getattr(command.callback, "translates_errors", False):
            command.callback = translate_errors(command.callback)
        app.registered_commands.append(command)


def include_group(app: typer.Typer, router: typer.Typer, name: str) -> None:
    for command in router.registered_commands:
        if not getattr(command.callback, "translates_errors", False):
            command.callback = translate_errors(command.callback)
    app.add_typer(router, name=name)


def create_app() -> typer.Typer:
    """
    Creates and configures the command-line application.
    Returns:
        Configured Typer application
    """
    settings = get_settings()

    app = typer.Typer(
        name=settings.app_name,
        help="Adversarial location obfuscation: train, evaluate and compare mechanisms.",
        no_args_is_help=False,
        add_completion=False,
    )

    @app.callback(invoke_without_command=True)
    @translate_errors
    def root(
        ctx: typer.Context,
        log_level: Annotated[Optional[str], typer.Option(help="DEBUG, INFO, WARNING, ERROR")] = None,
        json_logs: Annotated[Optional[bool], typer.Option("--json-logs/--text-logs", help="JSON log records")] = None,
        demo: Annotated[Optional[str], typer.Option(help="Run a demo instead of a command (payoff-tables)")] = None,
        version: Annotated[bool, typer.Option("--version", help="Print the version and exit")] = False,
    ) -> None:
        setup_logging(
            log_level=log_level or settings.log_level,
            json_format=settings.json_logs if json_logs is None else json_logs,
        )
        logger = get_logger(__name__)
        logger.debug("Application starting", extra={"app_name": settings.app_name, "command": ctx.invoked_subcommand})
        if version:
            typer.echo(__version__)
            raise typer.Exit()
        if demo is not None:
            if demo != "payoff-tables":
                raise ConfigError(f"unknown demo {demo!r}; available: payoff-tables")
            experiment.print_payoff_tables()
            raise typer.Exit()
        if ctx.invoked_subcommand is None:
            typer.echo(ctx.get_help())

    include_router(app, experiment.router)
    include_router(app, laplace.router)
    include_router(app, evaluate.router)
    include_router(app, oracle.router)
    include_router(app, selftest.router)
    include_group(app, data.router, "data")
    return app


def main() -> None:
    create_app()()


if __name__ == "__main__":
    main()
