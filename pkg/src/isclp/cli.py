"""
ISCLP CLI - Kalman-filter speech enhancement for microphone arrays.

Simple CLI using Typer with the published tuning as defaults.
"""

import dataclasses
import logging
from pathlib import Path
from typing import Any, Optional

import typer
from typing_extensions import Annotated

from isclp.config import MODES, RunConfig, apply_overrides, config_sets, load_config
from isclp.errors import IsclpError
from isclp.experiment import run_convergence, run_experiment, run_selftest
from isclp.pipeline import Enhancer
from isclp.scenario import build_scene, write_scene

app = typer.Typer(
    name="isclp",
    help="Joint dereverberation and noise reduction for microphone arrays (ISCLP Kalman filter)",
    add_completion=True,
    no_args_is_help=True,
)


def setup_logging(verbose: bool = False, quiet: bool = False):
    """Configure logging based on CLI flags."""
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = logging.INFO

    logging.basicConfig(
        level=level, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )


# Shared options; None means "keep the value from --config or the default"
ConfigOption = Annotated[
    Optional[Path], typer.Option("--config", help="TOML run configuration (flags override it)")
]
InputOption = Annotated[
    Optional[Path], typer.Option("--input", help="Multichannel WAV to enhance (16 kHz)")
]
OutOption = Annotated[
    Optional[Path], typer.Option("--out", help="Output directory [default: isclp-out]")
]
SnrOption = Annotated[
    Optional[list[float]],
    typer.Option(
        "--snr-db",
        help="Scene SNR in dB; repeat to sweep in experiments [default: 10]",
    ),
]
FilterLengthOption = Annotated[
    Optional[list[int]],
    typer.Option(
        "--filter-length",
        help="Filter length L in frames, >= 2; repeat to sweep in experiments "
        "[default: 6, published tuning]",
    ),
]
AlphaOption = Annotated[
    Optional[float],
    typer.Option("--alpha-db", help="10 log10(1 - alpha) [default: -25 dB, published tuning]"),
]
BetaOption = Annotated[
    Optional[float],
    typer.Option("--beta-db", help="20 log10(beta), gain decay limit [default: -2 dB, published tuning]"),
]
PsiLpOption = Annotated[
    Optional[float],
    typer.Option("--psi-lp-db", help="10 log10(psi_lp), LP prior [default: -4 dB, published tuning]"),
]
PsiScLowOption = Annotated[
    Optional[float],
    typer.Option("--psi-sc-db-low", help="SC prior at 0 Hz [default: 0 dB, published tuning]"),
]
PsiScHighOption = Annotated[
    Optional[float],
    typer.Option(
        "--psi-sc-db-high", help="SC prior at the Nyquist frequency [default: -15 dB, published tuning]"
    ),
]
EstimatorOption = Annotated[
    Optional[str],
    typer.Option(
        "--estimator",
        help="PSD/RETF estimator: blind or oracle [default: oracle for scenes, blind for enhance]",
    ),
]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Master seed [default: 0]")]
OutputOption = Annotated[
    Optional[str],
    typer.Option("--output", help="Enhanced signal: posterior (e+) or prior (e) [default: posterior]"),
]
VerboseOption = Annotated[bool, typer.Option("--verbose", "-v", help="Enable debug logging")]
QuietOption = Annotated[bool, typer.Option("--quiet", "-q", help="Minimal output")]


def build_config(config_path: Optional[Path], mode: str, **flags: Any) -> RunConfig:
    """
    Load the configuration file (if any) and apply the command-line flags.

    List-valued flags set the single-run value from their first entry and the
    experiment sweep from all entries.
    """
    config = load_config(config_path) if config_path else RunConfig()
    snr_db = flags.pop("snr_db", None)
    filter_length = flags.pop("filter_length", None)
    estimator = flags.pop("estimator", None)
    # Recordings default to the blind estimator unless the file chooses one
    if mode == "enhance" and estimator is None:
        if not (config_path and config_sets(config_path, "estimator", "kind")):
            estimator = "blind"

    overrides = {
        "mode": mode,
        "input": flags.pop("input", None),
        "out": flags.pop("out", None),
        "seed": flags.pop("seed", None),
        "output": flags.pop("output", None),
        "kalman.alpha_db": flags.pop("alpha_db", None),
        "kalman.beta_db": flags.pop("beta_db", None),
        "kalman.psi_lp_db": flags.pop("psi_lp_db", None),
        "kalman.psi_sc_db_low": flags.pop("psi_sc_db_low", None),
        "kalman.psi_sc_db_high": flags.pop("psi_sc_db_high", None),
    }
    if snr_db:
        overrides["scene.snr_db"] = snr_db[0]
        overrides["experiment.snr_db"] = list(snr_db)
    if filter_length:
        overrides["kalman.filter_length"] = filter_length[0]
        overrides["experiment.filter_lengths"] = list(filter_length)
    if estimator is not None:
        overrides["estimator.kind"] = estimator
        overrides["experiment.estimators"] = [estimator]

    config = apply_overrides(config, **overrides)
    config.validate()
    return config


def _report_selftest(config: RunConfig) -> int:
    results = run_selftest(config.seed)
    for result in results:
        if result.passed:
            typer.secho(f"  ✓ {result.name}: {result.error:.3g}", fg=typer.colors.GREEN)
        else:
            typer.secho(
                f"  ✗ {result.name}: {result.error:.3g} (limit {result.limit:g})",
                fg=typer.colors.RED,
            )
    failed = sum(1 for r in results if not r.passed)
    if failed:
        typer.secho(f"✗ {failed} of {len(results)} checks failed", fg=typer.colors.RED, err=True)
        return 1
    typer.secho(f"✓ All {len(results)} checks passed", fg=typer.colors.GREEN)
    return 0


def dispatch(config: RunConfig) -> int:
    """Run the configured mode; returns the exit code."""
    if config.mode == "enhance":
        stats = Enhancer.from_config(config).run(config.input, config.out, config.array)
        typer.echo()
        typer.secho(
            f"✓ Enhanced {stats.duration_seconds:.1f}s of audio -> {stats.output_path}",
            fg=typer.colors.GREEN,
        )
        if stats.diagnostics_path:
            typer.echo(f"  • Diagnostics: {stats.diagnostics_path}")
        return 0

    if config.mode == "experiment":
        rows = run_experiment(config)
        typer.echo()
        for row in (r for r in rows if r.scene == "median"):
            doa = "" if row.interferer_doa is None else f", interferer {row.interferer_doa:g} deg"
            typer.echo(
                f"  • SNR {row.snr_db:g} dB, L={row.filter_length}, {row.estimator}{doa}: "
                f"fwseg-SIR {row.sir_improvement:+.2f} dB, CD {row.cd_improvement:+.2f} dB"
            )
        typer.secho(f"✓ Wrote {Path(config.out) / 'metrics.csv'}", fg=typer.colors.GREEN)
        return 0

    if config.mode == "convergence":
        run_convergence(config)
        typer.secho(f"✓ Wrote {Path(config.out) / 'convergence.csv'}", fg=typer.colors.GREEN)
        return 0

    if config.mode == "scene":
        truth = build_scene(dataclasses.replace(config.scene, seed=config.seed))
        written = write_scene(truth, config.out)
        typer.secho(f"✓ Wrote {len(written)} files to {config.out}", fg=typer.colors.GREEN)
        return 0

    return _report_selftest(config)


def execute(config_path: Optional[Path], mode: str, verbose: bool, quiet: bool, **flags: Any):
    """Build the configuration, run the mode and map failures to exit codes."""
    setup_logging(verbose, quiet)
    try:
        code = dispatch(build_config(config_path, mode, **flags))
    except KeyboardInterrupt:
        typer.echo("\n")
        typer.secho("✗ Interrupted", fg=typer.colors.RED, err=True)
        code = 1
    except IsclpError as e:
        typer.secho(f"✗ Error: {e}", fg=typer.colors.RED, err=True)
        code = 1
    except Exception as e:
        typer.echo()
        typer.secho(f"✗ Error: {e}", fg=typer.colors.RED, err=True)
        typer.echo("\nFor help: isclp --help", err=True)
        code = 2
    if code:
        raise typer.Exit(code)


@app.command()
def enhance(
    input: InputOption = None,
    config: ConfigOption = None,
    out: OutOption = None,
    filter_length: FilterLengthOption = None,
    alpha_db: AlphaOption = None,
    beta_db: BetaOption = None,
    psi_lp_db: PsiLpOption = None,
    psi_sc_db_low: PsiScLowOption = None,
    psi_sc_db_high: PsiScHighOption = None,
    estimator: EstimatorOption = None,
    output: OutputOption = None,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """
    Enhance a multichannel WAV recording.

    Writes OUT/enhanced.wav and OUT/diagnostics.csv. Array geometry and
    source DoAs come from the [array] section of --config (default: linear
    array, 8 cm spacing, one source at broadside).

    Examples:

        # Enhance with the published tuning
        isclp enhance --input recording.wav --out enhanced/

        # Longer prediction filter, prior-error output
        isclp enhance --input recording.wav --filter-length 10 --output prior
    """
    execute(
        config, "enhance", verbose, quiet,
        input=input, out=out, filter_length=filter_length, alpha_db=alpha_db,
        beta_db=beta_db, psi_lp_db=psi_lp_db, psi_sc_db_low=psi_sc_db_low,
        psi_sc_db_high=psi_sc_db_high, estimator=estimator, output=output,
    )


@app.command()
def experiment(
    config: ConfigOption = None,
    out: OutOption = None,
    snr_db: SnrOption = None,
    filter_length: FilterLengthOption = None,
    alpha_db: AlphaOption = None,
    beta_db: BetaOption = None,
    psi_lp_db: PsiLpOption = None,
    psi_sc_db_low: PsiScLowOption = None,
    psi_sc_db_high: PsiScHighOption = None,
    estimator: EstimatorOption = None,
    seed: SeedOption = None,
    output: OutputOption = None,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """
    Metric sweep over synthetic scenes.

    Writes OUT/metrics.csv with fwseg-SIR and cepstral distance of microphone 1
    and of the enhanced signal, per scene and as medians per condition.

    Examples:

        # SNR sweep, oracle estimator
        isclp experiment --snr-db 0 --snr-db 10 --snr-db 20

        # Filter length comparison
        isclp experiment --filter-length 2 --filter-length 6
    """
    execute(
        config, "experiment", verbose, quiet,
        out=out, snr_db=snr_db, filter_length=filter_length, alpha_db=alpha_db,
        beta_db=beta_db, psi_lp_db=psi_lp_db, psi_sc_db_low=psi_sc_db_low,
        psi_sc_db_high=psi_sc_db_high, estimator=estimator, seed=seed, output=output,
    )


@app.command()
def convergence(
    config: ConfigOption = None,
    out: OutOption = None,
    snr_db: SnrOption = None,
    filter_length: FilterLengthOption = None,
    estimator: EstimatorOption = None,
    seed: SeedOption = None,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """
    Convergence after a 15 degree jump of the target source.

    Writes OUT/convergence.csv with metrics in sliding 2 s windows.
    """
    execute(
        config, "convergence", verbose, quiet,
        out=out, snr_db=snr_db, filter_length=filter_length, estimator=estimator, seed=seed,
    )


@app.command()
def scene(
    config: ConfigOption = None,
    out: OutOption = None,
    snr_db: SnrOption = None,
    seed: SeedOption = None,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """
    Build a synthetic scene and write its components as WAV files.

    Writes mix.wav, noise.wav, reference.wav, source_<n>.wav and
    true_retfs.npz to OUT.
    """
    execute(config, "scene", verbose, quiet, out=out, snr_db=snr_db, seed=seed)


@app.command()
def selftest(
    seed: SeedOption = None,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """
    Check the algebraic identities of the engine on small random instances.

    Exits with 1 if any check fails.
    """
    execute(None, "selftest", verbose, quiet, seed=seed)


@app.command()
def run(
    mode: Annotated[str, typer.Option("--mode", help=f"One of: {', '.join(MODES)}")] = "enhance",
    input: InputOption = None,
    config: ConfigOption = None,
    out: OutOption = None,
    snr_db: SnrOption = None,
    filter_length: FilterLengthOption = None,
    alpha_db: AlphaOption = None,
    beta_db: BetaOption = None,
    psi_lp_db: PsiLpOption = None,
    psi_sc_db_low: PsiScLowOption = None,
    psi_sc_db_high: PsiScHighOption = None,
    estimator: EstimatorOption = None,
    seed: SeedOption = None,
    output: OutputOption = None,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """
    Run any mode with the full flag set (the subcommands are shortcuts).

    Example:

        isclp run --mode experiment --config sweep.toml --seed 3
    """
    execute(
        config, mode, verbose, quiet,
        input=input, out=out, snr_db=snr_db, filter_length=filter_length, alpha_db=alpha_db,
        beta_db=beta_db, psi_lp_db=psi_lp_db, psi_sc_db_low=psi_sc_db_low,
        psi_sc_db_high=psi_sc_db_high, estimator=estimator, seed=seed, output=output,
    )


def main():
    """Entry point for CLI."""
    app()


if __name__ == "__main__":
    main()
