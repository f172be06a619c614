from __future__ import annotations

import functools
import json
import logging
import os
import sys
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any, cast

import click
import tomli_w
from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

# tomllib is only available in Python 3.11+
if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .config import RunConfig, read_config
from .errors import ConfigError, DwolError
from .runner import (
    SweepResult,
    SweepRow,
    run_design,
    run_groundstate,
    run_sweep,
    run_transport,
    scales_report,
)
from .verification import SUITE_NAMES, SuiteResult, run_suites

console = Console()
logger = logging.getLogger(__name__)

USER_KEYS = ("threads", "output_directory")


def handle_run_errors(func):  # type: ignore[no-untyped-def]
    """Decorator to turn package errors into user-friendly messages and exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):  # type: ignore[no-untyped-def]
        ctx = click.get_current_context()
        verbose = ctx.obj.get("verbose", False) if ctx.obj else False

        try:
            return func(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except ConfigError as e:
            console.print(f"[bold red]Error:[/bold red] {e}", style="red")
            if verbose:
                logger.exception("Full error details:")
            raise click.exceptions.Exit(2) from e
        except DwolError as e:
            console.print(f"[bold red]Error:[/bold red] {e}", style="red")
            if verbose:
                logger.exception("Full error details:")
            raise click.Abort() from e
        except Exception:
            if verbose:
                logger.exception("Unexpected error:")
            raise

    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Verbose output")
@click.option("-q", "--quiet", is_flag=True, help="Quiet output")
@click.pass_context
def main(ctx: click.Context, verbose: bool, quiet: bool) -> None:
    """Atom transport in a moving double-well optical lattice."""
    # Configure logging based on verbosity flags
    if verbose:
        logging.basicConfig(level=logging.DEBUG, format="%(levelname)s: %(message)s")
    elif quiet:
        logging.basicConfig(level=logging.ERROR, format="%(levelname)s: %(message)s")
    else:
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")

    ctx.ensure_object(dict)
    cfg = _load_config()
    logger.debug(f"Loaded user config: {cfg}")
    ctx.obj["user_config"] = cfg
    ctx.obj["verbose"] = verbose
    ctx.obj["quiet"] = quiet


def _parse_fractions(
    ctx: click.Context, param: click.Parameter, value: str | None
) -> tuple[float, ...] | None:
    if value is None:
        return None
    try:
        return tuple(float(part) for part in value.split(",") if part.strip())
    except ValueError as e:
        raise click.BadParameter(
            f"expected comma-separated numbers, got {value!r}"
        ) from e


def run_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """Options shared by the run commands."""
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(dir_okay=False, path_type=Path),
            required=True,
            help="Run configuration (TOML)",
        ),
        click.option(
            "--out",
            envvar="DWOL_OUT",
            type=click.Path(file_okay=False, path_type=Path),
            default=None,
            help="Output directory",
        ),
        click.option(
            "--threads",
            envvar="DWOL_THREADS",
            type=click.IntRange(min=1),
            default=None,
            help="Worker processes / FFT threads",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


snapshot_option = click.option(
    "--snapshot-fractions",
    callback=_parse_fractions,
    default=None,
    help="Comma-separated fractions of t_f at which to dump the wave field",
)

format_option = click.option(
    "--format",
    "fmt",
    type=click.Choice(["rich", "json"], case_sensitive=False),
    default="rich",
    show_default=True,
    help="Output format",
)


def _resolve_run(
    ctx: click.Context,
    config_path: Path,
    out: Path | None,
    threads: int | None,
    snapshot_fractions: tuple[float, ...] | None = None,
) -> RunConfig:
    """Read the run file and apply harness settings.

    Precedence for threads and output directory:
    --flag / environment > user config > run file (or its default).
    """
    cfg = read_config(config_path)
    user: dict[str, Any] = ctx.obj.get("user_config", {})

    if threads is not None:
        logger.debug(f"Using threads from CLI/env: {threads}")
    elif "threads" in user:
        try:
            threads = int(user["threads"])
        except ValueError as e:
            raise ConfigError(
                f"user config threads={user['threads']!r} is not an integer", "threads"
            ) from e
        logger.debug(f"Using threads from user config: {threads}")
    else:
        logger.debug(f"Using threads from run config: {cfg.threads}")

    directory: Path | None = out
    if directory is not None:
        logger.debug(f"Using output directory from CLI/env: {directory}")
    elif "output_directory" in user:
        directory = Path(str(user["output_directory"]))
        logger.debug(f"Using output directory from user config: {directory}")
    else:
        logger.debug(f"Using output directory from run config: {cfg.output_directory}")

    return cfg.with_overrides(
        threads=threads,
        directory=directory,
        snapshot_fractions=snapshot_fractions,
    )


@contextmanager
def _spinner(ctx: click.Context, description: str) -> Iterator[Callable[[str], None]]:
    """Transient progress spinner; yields a function updating its text."""
    if ctx.obj.get("quiet"):
        yield lambda _text: None
        return
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task(description, total=None)
        yield lambda text: progress.update(task, description=f"{description}: {text}")


def _files_table(files: list[Path], title: str) -> Table:
    table = Table(title=title, header_style="bold cyan", show_lines=False)
    table.add_column("File", style="bold")
    table.add_column("Bytes", justify="right")
    for path in files:
        table.add_row(str(path), str(path.stat().st_size) if path.exists() else "-")
    return table


@main.command("design")
@run_options
@click.pass_context
@handle_run_errors
def design(
    ctx: click.Context,
    config_path: Path,
    out: Path | None,
    threads: int | None,
) -> None:
    """Write trajectory tables, coefficients and the eSTA correction report."""
    cfg = _resolve_run(ctx, config_path, out, threads)
    with _spinner(ctx, "Designing trajectories"):
        result = run_design(cfg)
    console.print(_files_table(result.files, f"Design ({', '.join(cfg.methods)})"))


@main.command("groundstate")
@run_options
@format_option
@click.pass_context
@handle_run_errors
def groundstate(
    ctx: click.Context,
    config_path: Path,
    out: Path | None,
    threads: int | None,
    fmt: str,
) -> None:
    """Compute the ITE ground state and dump it."""
    cfg = _resolve_run(ctx, config_path, out, threads)
    with _spinner(ctx, "Imaginary-time evolution"):
        ground, files = run_groundstate(cfg)
    energy = ground.energy / cfg.scales.e_r
    if fmt.lower() == "json":
        click.echo(
            json.dumps(
                {"energy_E_R": energy, "files": [str(f) for f in files]},
                ensure_ascii=False,
                indent=2,
            )
        )
        return
    console.print(f"Ground-state energy: [bold]{energy:.10g}[/bold] E_R")
    console.print(_files_table(files, "Ground state"))


@main.command("transport")
@run_options
@snapshot_option
@format_option
@click.pass_context
@handle_run_errors
def transport(
    ctx: click.Context,
    config_path: Path,
    out: Path | None,
    threads: int | None,
    snapshot_fractions: tuple[float, ...] | None,
    fmt: str,
) -> None:
    """Ground state, comoving propagation and fidelity for each method."""
    cfg = _resolve_run(ctx, config_path, out, threads, snapshot_fractions)
    t_f = cfg.transport.t_f
    with _spinner(ctx, "Transport") as update:
        rows, files = run_transport(
            cfg, on_step=lambda t: update(f"t/t_f = {t / t_f:.3f}")
        )
    if fmt.lower() == "json":
        click.echo(
            json.dumps(
                {
                    "rows": [
                        {
                            "method": r.method,
                            "t_f_over_tx": r.t_f_over_tx,
                            "fidelity": r.fidelity,
                            "accepted_steps": r.accepted_steps,
                            "rejected_steps": r.rejected_steps,
                            "diagnostics": list(r.diagnostics),
                        }
                        for r in rows
                    ],
                    "files": [str(f) for f in files],
                },
                ensure_ascii=False,
                indent=2,
            )
        )
        return
    table = Table(title="Transport", header_style="bold cyan", show_lines=False)
    table.add_column("Method", style="bold")
    table.add_column("t_f / T_x", justify="right")
    table.add_column("Fidelity", justify="right", style="green")
    table.add_column("Steps", justify="right")
    table.add_column("Diagnostics")
    for r in rows:
        table.add_row(
            r.method,
            f"{r.t_f_over_tx:.4g}",
            f"{r.fidelity:.8f}",
            f"{r.accepted_steps} (+{r.rejected_steps})",
            ", ".join(r.diagnostics),
        )
    console.print(table)


@main.command("sweep")
@run_options
@snapshot_option
@format_option
@click.pass_context
@handle_run_errors
def sweep(
    ctx: click.Context,
    config_path: Path,
    out: Path | None,
    threads: int | None,
    snapshot_fractions: tuple[float, ...] | None,
    fmt: str,
) -> None:
    """Run transport for every value of the [sweep] axis."""
    cfg = _resolve_run(ctx, config_path, out, threads, snapshot_fractions)
    if cfg.sweep is None:
        raise ConfigError("the sweep command needs a [sweep] table", "sweep")
    total = len(cfg.sweep.values)
    done: list[SweepRow] = []
    with _spinner(ctx, f"Sweeping {cfg.sweep.variable}") as update:

        def on_row(row: SweepRow) -> None:
            done.append(row)
            update(f"{len(done)}/{total}")

        result = run_sweep(cfg, on_row=on_row)
    if fmt.lower() == "json":
        click.echo(
            json.dumps(
                {
                    "variable": result.variable,
                    "rows": len(result.rows),
                    "breakdown_onset_t_f_over_tx": result.onsets,
                    "failed_rows": len(result.failed_rows),
                    "files": [str(f) for f in result.files],
                },
                ensure_ascii=False,
                indent=2,
            )
        )
    else:
        _print_sweep(result)
    if result.failed_rows:
        logger.error(
            f"{len(result.failed_rows)} of {len(result.rows)} sweep points failed; "
            "see the diagnostics column of sweep.csv"
        )
        ctx.exit(1)


def _print_sweep(result: SweepResult) -> None:
    table = Table(
        title=f"Sweep over {result.variable} ({len(result.rows)} points)",
        header_style="bold cyan",
        show_lines=False,
    )
    table.add_column(result.variable, style="bold")
    table.add_column("t_f / T_x", justify="right")
    for method in result.methods:
        table.add_column(f"F ({method})", justify="right", style="green")
    table.add_column("Diagnostics")
    for row in result.rows:
        table.add_row(
            str(row.value),
            f"{row.t_f_over_tx:.4g}",
            *(f"{row.fidelity(m):.6f}" for m in result.methods),
            ", ".join(row.diagnostics),
        )
    console.print(table)
    for method, onset in result.onsets.items():
        text = "not crossed" if onset is None else f"{onset:.3f} T_x"
        console.print(f"Breakdown onset ({method}): {text}")


@main.command("verify")
@click.argument(
    "suite",
    type=click.Choice(["all", *SUITE_NAMES], case_sensitive=False),
    default="all",
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Run configuration whose [run] seed is used when --seed is absent",
)
@click.option("--seed", type=int, default=None, help="Random seed (default: 0)")
@click.option("--full", is_flag=True, help="Acceptance-sized runs")
@format_option
@click.pass_context
@handle_run_errors
def verify(
    ctx: click.Context,
    suite: str,
    config_path: Path | None,
    seed: int | None,
    full: bool,
    fmt: str,
) -> None:
    """Run oracle suites; exits non-zero on any failed check."""
    if seed is None and config_path is not None:
        seed = read_config(config_path).seed
        logger.debug(f"Using seed from run config: {seed}")
    seed = 0 if seed is None else seed
    names = list(SUITE_NAMES) if suite.lower() == "all" else [suite.lower()]
    results: list[SuiteResult] = []
    with _spinner(ctx, "Verifying") as update:
        results = run_suites(
            names, seed=seed, full=full, on_suite=lambda r: update(f"{r.suite} done")
        )
    if fmt.lower() == "json":
        click.echo(
            json.dumps(
                {
                    "passed": all(r.passed for r in results),
                    "seed": seed,
                    "suites": [r.to_record() for r in results],
                },
                ensure_ascii=False,
                indent=2,
            )
        )
    else:
        table = Table(title="Verification", header_style="bold cyan", show_lines=False)
        table.add_column("Suite", style="bold")
        table.add_column("Check")
        table.add_column("Value", justify="right")
        table.add_column("Limit", justify="right")
        table.add_column("Result")
        for r in results:
            for check in r.checks:
                if check.limit is None:
                    limit, outcome = "-", "[dim]recorded[/dim]"
                else:
                    limit = f"{check.limit:.3g}"
                    outcome = "[green]pass[/green]"
                    if not check.passed:
                        outcome = "[red]FAIL[/red]"
                table.add_row(r.suite, check.name, f"{check.value:.3g}", limit, outcome)
        console.print(table)
    if not all(r.passed for r in results):
        ctx.exit(1)


@main.command("scales")
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    required=True,
    help="Run configuration (TOML)",
)
@format_option
@click.pass_context
@handle_run_errors
def scales(ctx: click.Context, config_path: Path, fmt: str) -> None:
    """Harmonic model, critical accelerations and minimum transport time."""
    report = scales_report(read_config(config_path))
    if fmt.lower() == "json":
        click.echo(json.dumps(report, ensure_ascii=False, indent=2))
        return
    table = Table(title="Scales", header_style="bold cyan", show_lines=False)
    table.add_column("Quantity", style="bold")
    table.add_column("Value", justify="right")
    flat = {**report.pop("harmonic"), **report}
    for key, value in flat.items():
        shown = f"{value:.8g}" if isinstance(value, float) else str(value)
        table.add_row(key, shown)
    console.print(table)


@main.group()
def config() -> None:
    """Manage dwoltransport user defaults."""


def _config_path() -> str:
    base = os.path.join(os.path.expanduser("~"), ".config", "dwoltransport")
    os.makedirs(base, exist_ok=True)
    return os.path.join(base, "config.toml")


def _load_config() -> dict[str, Any]:
    path = _config_path()
    if not os.path.exists(path):
        return {}
    with open(path, "rb") as f:
        return cast(dict[str, Any], tomllib.load(f))


def _save_config(cfg: dict[str, Any]) -> None:
    with open(_config_path(), "wb") as f:
        f.write(tomli_w.dumps(cfg).encode())


@config.command("set")
@click.argument("key", type=click.Choice(USER_KEYS))
@click.argument("value")
def config_set(key: str, value: str) -> None:
    cfg = _load_config()
    if key == "threads":
        try:
            cfg[key] = int(value)
        except ValueError as e:
            raise click.BadParameter(
                f"threads must be an integer, got {value!r}"
            ) from e
    else:
        cfg[key] = value
    _save_config(cfg)
    click.echo(f"Set {key}")


@config.command("get")
@click.argument("key")
def config_get(key: str) -> None:
    cfg = _load_config()
    click.echo(cfg.get(key, ""))


@config.command("show")
def config_show() -> None:
    cfg = _load_config()
    click.echo(json.dumps(cfg, ensure_ascii=False, indent=2))


@config.command("resolve")
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    required=True,
    help="Run configuration (TOML)",
)
@click.pass_context
@handle_run_errors
def config_resolve(ctx: click.Context, config_path: Path) -> None:
    """Print the fully resolved run configuration as TOML."""
    click.echo(read_config(config_path).to_toml(), nl=False)


@main.group()
def completions() -> None:
    """Generate shell completion scripts."""


@completions.command("bash")
def completions_bash() -> None:
    """Output bash completion eval line."""
    click.echo('eval "$( _DWOLTRANSPORT_COMPLETE=bash_source dwoltransport )"')


@completions.command("zsh")
def completions_zsh() -> None:
    """Output zsh completion eval line."""
    click.echo('eval "$( _DWOLTRANSPORT_COMPLETE=zsh_source dwoltransport )"')


@completions.command("fish")
def completions_fish() -> None:
    """Output fish completion eval line."""
    click.echo("_DWOLTRANSPORT_COMPLETE=fish_source dwoltransport | source")


if __name__ == "__main__":
    main()
