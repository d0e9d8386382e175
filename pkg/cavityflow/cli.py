"""cavityflow command line.

    cavityflow groundstate        --preset fig2
    cavityflow trajectory         --preset fig2 --trajectories 50 --seed 1 --out runs/fig2
    cavityflow sme                --config my.json
    cavityflow thinning           --preset fig2 --emit-plot-data
    cavityflow meanfield          --preset fig5 --workers 4
    cavityflow describe-geometry  --preset fig4-period3

The subcommand sets ``mode``; flags override the config file, which overrides
the preset.  Exit codes: 0 success, 2 config error, 3 capacity error,
4 numerical failure.
"""

from __future__ import annotations

import sys

import click

from cavityflow.config import MODES, RUN_PRESETS, parse_config
from cavityflow.errors import CavityFlowError
from cavityflow.logging import disable_logging, get_logger, setup_logging

_log = get_logger("cli")


def _options(f):
    f = click.option("--verbose", "-v", is_flag=True, help="Log to the console as well.")(f)
    f = click.option("--workers", type=int, default=None, help="Worker processes for the ensemble.")(f)
    f = click.option("--emit-plot-data", is_flag=True, default=False,
                     help="Also write long-format plot_data.csv.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None,
                     help="Output directory.")(f)
    f = click.option("--trajectories", type=int, default=None, help="Number of realizations.")(f)
    f = click.option("--seed", type=int, default=None, help="Master seed.")(f)
    f = click.option("--preset", type=click.Choice(RUN_PRESETS), default=None,
                     help="Start from a shipped preset.")(f)
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="JSON config file.")(f)
    return f


def execute(mode: str, config_path, preset, seed, trajectories, out, emit_plot_data,
            workers, verbose) -> int:
    """Parse, run and map failures to exit codes; returns the exit code."""
    from cavityflow.pipeline import run

    overrides = {
        "mode": mode,
        "ensemble.seed": seed,
        "ensemble.trajectories": trajectories,
        "ensemble.workers": workers,
        "output.directory": out,
        "output.emit_plot_data": emit_plot_data or None,
    }
    try:
        cfg = parse_config(config_path, preset, overrides)
    except CavityFlowError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code

    log_path = setup_logging(mode, cfg.output.directory, verbose=verbose)
    _log.info("cavityflow %s  config=%s  preset=%s  log=%s", mode, config_path, preset, log_path)
    try:
        out_dir = run(cfg)
    except CavityFlowError as exc:
        _log.error("%s: %s", type(exc).__name__, exc)
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return exc.exit_code
    finally:
        disable_logging()
    click.echo(str(out_dir))
    return 0


@click.group()
@click.version_option(package_name="cavityflow")
def main():
    """Measurement-induced ordering of lattice fermions under cavity light detection."""


def _subcommand(mode: str, help_text: str):
    @_options
    def command(config_path, preset, seed, trajectories, out, emit_plot_data, workers, verbose):
        code = execute(mode, config_path, preset, seed, trajectories, out, emit_plot_data,
                       workers, verbose)
        sys.exit(code)

    command.__doc__ = help_text
    main.command(name=mode, help=help_text)(command)


_HELP = {
    "groundstate": "Exact ground state of the configured sector.",
    "trajectory": "Quantum-jump trajectory ensemble (efficient detection).",
    "sme": "Stochastic master equation with detection efficiency η.",
    "thinning": "Jump trajectories with Bernoulli-thinned detections.",
    "meanfield": "Stochastic mean-field dynamics of n_k and α_k.",
    "describe-geometry": "Scattering coefficients, modes and Fourier profile of the geometry.",
}

for _mode in MODES:
    _subcommand(_mode, _HELP[_mode])


if __name__ == "__main__":
    main()
