#!/usr/bin/env python3
"""
byzsgd - Byzantine-resilient SGD simulator

Runs training experiments and estimator diagnostics from an INI config:

  byzsgd --config run.ini train
  byzsgd --config run.ini --replicates 10 --threads 4 train
  byzsgd --seed 3 --out bench rge-bench

Exit codes: 0 success, 1 configuration or usage error, 2 estimator failure.
"""

import logging
import sys
from typing import Any, List, Optional, Sequence

import click

from byzsgd import harness
from byzsgd.config import RunConfig, apply_overrides, load_config
from byzsgd.errors import ConfigError, FilterError, TrainingAborted

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

LOG_LEVELS = [logging.WARNING, logging.INFO, logging.DEBUG]


def _config(ctx: click.Context) -> RunConfig:
    config: RunConfig = ctx.obj
    return config


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    help="INI file with [experiment] [data] [objective] [train] [attack] [seeds] sections",
)
@click.option("--seed", type=int, help="Master seed (overrides [seeds] master)")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory")
@click.option("--replicates", type=int, help="Number of seed replicates for train")
@click.option("--threads", type=int, help="Worker threads for gradients and replicates")
@click.option("--sigma0-sq", "sigma0_sq", type=float, help="Override the filter's squared radius sigma0^2")
@click.option("-v", "--verbose", count=True, help="-v for INFO, -vv for DEBUG logging")
@click.pass_context
def cli(
    ctx: click.Context,
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    replicates: Optional[int],
    threads: Optional[int],
    sigma0_sq: Optional[float],
    verbose: int,
) -> None:
    """Simulate Byzantine-resilient distributed SGD and check its guarantees."""
    logging.basicConfig(
        level=LOG_LEVELS[min(verbose, len(LOG_LEVELS) - 1)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    config = load_config(config_path)
    ctx.obj = apply_overrides(config, seed, out, replicates, threads, sigma0_sq)


@cli.command()
@click.pass_context
def train(ctx: click.Context) -> None:
    """Run training replicates; writes metrics.csv and summary.json."""
    config = _config(ctx)
    try:
        outcome = harness.run_train(config)
    except TrainingAborted as exc:
        click.echo(f"Training aborted: {exc} (partial metrics in {config.out})", err=True)
        raise
    final = outcome.metrics[-1]
    click.echo(f"Wrote {outcome.out_dir / 'metrics.csv'} ({len(outcome.metrics)} rounds)")
    if final.dist_sq_to_opt is not None:
        click.echo(f"Final ||x - x*||^2 = {final.dist_sq_to_opt:.6g}")
    click.echo(f"Final ||grad F||^2 = {final.grad_norm_sq:.6g}")


@cli.command("rge-bench")
@click.pass_context
def rge_bench(ctx: click.Context) -> None:
    """Benchmark the robust estimator on planted outliers."""
    rows = harness.run_rge_bench(_config(ctx))
    for row in rows:
        mark = "✓" if row["all_within_bound"] else "✗"
        click.echo(
            f"{mark} eps={row['eps_tilde']:<5} {row['attack']:<17} "
            f"max={row['max_error']:.4g} median={row['median_error']:.4g} "
            f"naive={row['median_naive_error']:.4g} bound={row['bound']:.4g} "
            f"below_tenth_naive={'yes' if row['median_below_tenth_naive'] else 'no'}"
        )


@cli.command("concentration-check")
@click.pass_context
def concentration_check(ctx: click.Context) -> None:
    """Enumerate subsets and compare the best lambda_max with its bound."""
    rows = harness.run_concentration_check(_config(ctx))
    held = sum(1 for r in rows if r["holds"])
    click.echo(f"Bound held in {held}/{len(rows)} seeds")


@cli.command("compress-check")
@click.pass_context
def compress_check(ctx: click.Context) -> None:
    """Check rand-k unbiasedness and the variance bound."""
    report = harness.run_compress_check(_config(ctx))
    exact = report["enumeration"]
    mc = report["monte_carlo"]
    click.echo(f"Enumeration: max bias {exact['max_abs_bias']:.3g}, variance ok: {exact['variance_within_bound']}")
    click.echo(f"Monte-Carlo: max z {mc['max_z_score']:.3g}, variance ok: {mc['variance_within_bound']}")


@cli.command("kappa-scan")
@click.pass_context
def kappa_scan(ctx: click.Context) -> None:
    """Sweep n and fit the decay of the empirical kappa excess."""
    result = harness.run_kappa_scan(_config(ctx))
    for row in result["rows"]:
        click.echo(f"n={row['n']:<6} kappa_hat={row['kappa_hat']:.5g} excess={row['excess']:.4g}")
    click.echo(f"log-log slope: {result['slope']:.4f}")


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI on ``argv`` and return the process exit code"""
    args: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        rv: Any = cli.main(args=args, prog_name="byzsgd", standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"Configuration error: {exc}", err=True)
        return EXIT_CONFIG
    except FilterError as exc:
        click.echo(f"Estimator failure: {exc}", err=True)
        return EXIT_RUNTIME
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except click.Abort:
        click.echo("Aborted", err=True)
        return EXIT_CONFIG
    return rv if isinstance(rv, int) else EXIT_OK


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
