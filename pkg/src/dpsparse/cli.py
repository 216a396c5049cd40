"""Command-line front end.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are the
option names with dashes turned into underscores); explicit flags override
the file. Runs that write outputs also write a manifest that ``replay`` uses
to reproduce them.

Exit codes: 0 success, 1 usage or input error, 2 too many degenerate
replications in a benchmark.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import sys
import tempfile
import warnings
from importlib import resources
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bench import DEGENERATE_LIMIT, expand_suite, run_suite, suite_from_manifest
from .dataio import CsvParseError, ingest_csv
from .fdr import MirrorConfig, MirrorKind, dp_fdr_pipeline, noise_bounds
from .inference import DegenerateVarianceWarning, debias_noise_variance, dp_confidence_intervals
from .mechanisms import (
    BudgetExceededError,
    InvalidParameterError,
    NoiseMode,
    PrivacyBudget,
    gaussian_std,
    laplace_scale,
)
from .noisy_ht import NoisyHtParams
from .precision import precision_config
from .regression import IhtConfig, adaptive_dp_regression, compute_K, default_T
from .report import RunManifest, format_table, read_manifest, rows_to_csv, write_manifest
from .synth import DesignSpec, dump_csv, generate

log = logging.getLogger("dpsparse")

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE = 0, 1, 2
NON_PRIVATE_BANNER = "WARNING: noise disabled; these outputs are NOT differentially private"


class DegenerateRun(click.ClickException):
    exit_code = EXIT_DEGENERATE


# ---------------------------------------------------------------- helpers

def _merge_config(ctx: click.Context, params: dict) -> dict:
    """Defaults < config file < explicit flags."""
    path = params.pop("config", None)
    if not path:
        return params
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise click.UsageError(f"cannot read config {path}: {err}") from None
    if not isinstance(doc, dict):
        raise click.UsageError(f"config {path} must hold a JSON object")
    unknown = set(doc) - set(params)
    if unknown:
        raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
    out = dict(params)
    for key, value in doc.items():
        src = ctx.get_parameter_source(key)
        if src is not click.core.ParameterSource.COMMANDLINE:
            out[key] = value
    return out


def _delta(value, n: int) -> float:
    if value in (None, "auto"):
        return n ** -1.1
    try:
        d = float(value)
    except ValueError:
        raise click.UsageError(f"--delta must be a number or 'auto', got {value!r}") from None
    return d


def _sha(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _noise(params) -> NoiseMode:
    mode = NoiseMode(params["noise"])
    if mode is NoiseMode.DISABLED:
        click.echo(NON_PRIVATE_BANNER, err=True)
    return mode


def _load(params):
    try:
        data, info = ingest_csv(params["data"], params["target"])
    except (OSError, CsvParseError) as err:
        raise click.UsageError(str(err)) from None
    click.echo(f"loaded n={info.n} p={info.p} max|x|={info.max_abs_x:.6g}", err=True)
    return data, info


def _beta_config(params, n: int, cx_seen: float, mode: NoiseMode) -> IhtConfig:
    if params.get("R") is not None:
        R = float(params["R"])
    elif params.get("sigma") is not None:
        R = float(params["sigma"]) * math.sqrt(2 * math.log(n))
    else:
        raise click.UsageError("one of --R or --sigma is required to set the clipping level")
    cx = params["cx"]
    if cx is None:
        cx = cx_seen
        click.echo("note: c_x taken from the data (max |x|); pass --cx to avoid this leak",
                   err=True)
    C = params["C"]
    return IhtConfig(eta0=params["eta0"], T=params["T"] or default_T(n), R=R, C=C,
                     B=2 * (R + C * cx) * cx, cx=cx, noise_mode=mode, K=params["K"],
                     K_max=params["K_max"])


def _write_outputs(out: Path, text: str, command: str, params: dict, seed: int,
                   budget: dict, extra: dict | None = None) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    outputs = {out.name: _sha(out)}
    for p in (extra or {}).values():
        outputs[Path(p).name] = _sha(p)
    config = {k: v for k, v in params.items() if k not in ("seed", "out")}
    config["non_private"] = params.get("noise") == NoiseMode.DISABLED.value
    manifest = RunManifest(seed=seed, config=config, command=command, budget_totals=budget,
                           outputs=outputs)
    write_manifest(manifest, out.with_name(out.name + ".manifest.json"))


def _tuning_options(f):
    opts = [
        click.option("--data", required=False, type=click.Path(dir_okay=False),
                     help="CSV file with a header row."),
        click.option("--target", default="y", show_default=True, help="Response column."),
        click.option("--epsilon", type=float, default=0.5, show_default=True),
        click.option("--delta", default="auto", show_default=True, help="Number or 'auto' = n^-1.1."),
        click.option("--sigma", type=float, default=None, help="Noise level; sets R = sigma*sqrt(2 log n)."),
        click.option("--R", "R", type=float, default=None, help="Clipping level (overrides --sigma)."),
        click.option("--cx", type=float, default=None, help="Entrywise bound on x (default: data max)."),
        click.option("--C", "C", type=float, default=3.0, show_default=True, help="l2 radius for beta."),
        click.option("--eta0", type=float, default=0.5, show_default=True),
        click.option("--T", "T", type=int, default=None, help="Iterations (default ceil(ln n))."),
        click.option("--K", "K", type=int, default=None, help="Force the largest doubling exponent."),
        click.option("--K-max", "K_max", type=int, default=12, show_default=True),
        click.option("--c0", type=float, default=1.0, show_default=True, help="BIC penalty constant."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--noise", type=click.Choice([m.value for m in NoiseMode]),
                     default="calibrated", show_default=True),
        click.option("--out", type=click.Path(dir_okay=False), default=None),
        click.option("--config", type=click.Path(dir_okay=False), default=None),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


# ---------------------------------------------------------------- runners
# Each runner takes the merged parameter dict, so ``replay`` can call it.

def run_simulate(params: dict) -> None:
    spec = DesignSpec(n=params["n"], p=params["p"], covariance=params["covariance"],
                      rho=params["rho"], s0=params["s0"], support=params["support"],
                      signal=params["signal"], amplitude=params["amplitude"],
                      sigma=params["sigma"], cx=params["cx"])
    data, beta, _ = generate(spec, np.random.default_rng(params["seed"]))
    out = Path(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_csv(data, out, params["target"])
    truth = out.with_name(out.stem + ".truth.csv")
    truth.write_text(rows_to_csv([{"j": j, "beta": float(b)} for j, b in enumerate(beta)]))
    config = {k: v for k, v in params.items() if k not in ("seed", "out")}
    manifest = RunManifest(seed=params["seed"], config=config, command="simulate",
                           outputs={out.name: _sha(out), truth.name: _sha(truth)})
    write_manifest(manifest, out.with_name(out.name + ".manifest.json"))
    click.echo(f"wrote {out} (n={spec.n}, p={spec.p}) and {truth.name}")


def run_estimate(params: dict) -> None:
    mode = _noise(params)
    data, info = _load(params)
    delta = _delta(params["delta"], data.n)
    cfg = _beta_config(params, data.n, info.max_abs_x, mode)
    budget = PrivacyBudget(params["epsilon"], delta)
    rng = np.random.default_rng(params["seed"])
    est = adaptive_dp_regression(data, budget, cfg, params["c0"], rng)
    rec = est.to_record()
    click.echo(f"k={rec['k']} support=[{rec['support']}] eps={budget.spent_epsilon!r} "
               f"delta={budget.spent_delta!r}")
    if params["out"]:
        rows = [{"j": int(j), "column": info.columns[j], "beta": float(est.beta[j])}
                for j in est.support]
        _write_outputs(Path(params["out"]), rows_to_csv(rows, ["j", "column", "beta"]) or
                       "j,column,beta\n", "estimate", params, params["seed"],
                       {"epsilon": budget.spent_epsilon, "delta": budget.spent_delta})


def run_ci(params: dict) -> int:
    mode = _noise(params)
    data, info = _load(params)
    delta = _delta(params["delta"], data.n)
    beta_cfg = _beta_config(params, data.n, info.max_abs_x, mode)
    L = params["L"]
    w_cfg = precision_config(data.n, L, beta_cfg.cx, params["C_w"] or 2 * L, eta0=params["eta0"],
                             T=params["T"], K=params["K"], K_max=params["K_max"], noise_mode=mode,
                             gradient_sign=params["gradient_sign"])
    js = [int(j) for j in params["j"]] or list(range(min(10, data.p)))
    budget = PrivacyBudget(params["epsilon"], delta)
    rng = np.random.default_rng(params["seed"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateVarianceWarning)
        results = dp_confidence_intervals(data, js, params["alpha"], budget, beta_cfg, w_cfg,
                                          rng, c0=params["c0"], shared=params["shared"])
    for w in caught:
        click.echo(f"warning: {w.message}", err=True)
    rows = [r.to_row() for r in results]
    click.echo(format_table(rows, ["j", "beta_db", "lo_naive", "hi_naive", "lo_corr", "hi_corr",
                                   "degenerate_flag"]))
    click.echo(f"charged eps={budget.spent_epsilon!r} delta={budget.spent_delta!r}")
    if params["out"]:
        _write_outputs(Path(params["out"]), rows_to_csv(rows), "ci", params, params["seed"],
                       {"epsilon": budget.spent_epsilon, "delta": budget.spent_delta})
    return sum(r.degenerate for r in results)


def run_fdr(params: dict) -> None:
    mode = _noise(params)
    data, info = _load(params)
    delta = _delta(params["delta"], data.n)
    cfg = _beta_config(params, data.n, info.max_abs_x, mode)
    n1 = (data.n + 1) // 2
    try:
        K = compute_K(n1, data.p, cfg.log_base, cfg.K, cfg.K_max)
    except InvalidParameterError as err:
        raise click.UsageError(str(err)) from None
    b1, b2 = noise_bounds(data.n, cfg.cx, cfg.R, 2 ** K)
    mcfg = MirrorConfig(f_kind=MirrorKind(params["f_kind"]), q=params["q"], B1=b1, B2=b2)
    budget = PrivacyBudget(params["epsilon"], delta)
    rng = np.random.default_rng(params["seed"])
    sel = dp_fdr_pipeline(data, cfg.with_(T=min(cfg.T, n1)), mcfg, budget, rng, c0=params["c0"])
    names = [info.columns[j] for j in sel.selected]
    click.echo(f"candidates={sel.support_A.size} tau={sel.tau!r} selected={names} "
               f"flags={sel.flags}")
    click.echo(f"charged eps={budget.spent_epsilon!r} delta={budget.spent_delta!r}")
    if params["out"]:
        rows = [{"j": int(j), "column": info.columns[j], "mirror": float(m),
                 "selected": int(m > sel.tau)}
                for j, m in zip(sel.support_A, sel.mirrors)]
        _write_outputs(Path(params["out"]),
                       rows_to_csv(rows, ["j", "column", "mirror", "selected"]) or
                       "j,column,mirror,selected\n", "fdr", params, params["seed"],
                       {"epsilon": budget.spent_epsilon, "delta": budget.spent_delta})


def _profile_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    res = resources.files("dpsparse") / "profiles" / f"{name}.json"
    if res.is_file():
        return Path(str(res))
    raise click.UsageError(f"no scenario file or bundled profile named {name!r}")


def run_bench(params: dict) -> None:
    doc = json.loads(_profile_path(params["scenario"]).read_text())
    for key in ("reps", "seed"):
        if params.get(key) is not None:
            doc[key] = params[key]
    if params.get("noise"):
        doc["noise"] = params["noise"]
    try:
        scenarios = expand_suite(doc)
    except (TypeError, InvalidParameterError) as err:
        raise click.UsageError(f"bad scenario file: {err}") from None
    if any(sc.noise_mode is NoiseMode.DISABLED for sc in scenarios):
        click.echo(NON_PRIVATE_BANNER, err=True)
    results, out = run_suite(scenarios, params["out"], params.get("workers"), suite_doc=doc)
    _report_bench(results, out)


def _report_bench(results, out: Path) -> None:
    rows = [r for res in results for r in res.metrics]
    click.echo(format_table(rows, ["scenario_id", "method", "avg_coverage", "avg_length",
                                   "empirical_fdr", "avg_power", "degenerate", "errors",
                                   "budget_ok"]))
    click.echo(f"outputs in {out}")
    worst = max((res.degenerate_fraction for res in results), default=0.0)
    if worst > DEGENERATE_LIMIT:
        raise DegenerateRun(f"{worst:.0%} of private replications were degenerate "
                            f"(limit {DEGENERATE_LIMIT:.0%})")


# ---------------------------------------------------------------- commands

@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def cli(verbose: int) -> None:
    """Differentially private sparse regression, inference and FDR control."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--n", type=int, default=2000, show_default=True)
@click.option("--p", type=int, default=500, show_default=True)
@click.option("--covariance", type=click.Choice(["toeplitz", "blocked", "identity"]),
              default="toeplitz", show_default=True)
@click.option("--rho", type=float, default=0.0, show_default=True)
@click.option("--s0", type=int, default=3, show_default=True)
@click.option("--support", type=click.Choice(["prefix", "random"]), default="prefix",
              show_default=True)
@click.option("--signal", type=click.Choice(["fixed", "gaussian"]), default="fixed",
              show_default=True)
@click.option("--amplitude", type=float, default=1.0, show_default=True)
@click.option("--sigma", type=float, default=1.0, show_default=True)
@click.option("--cx", type=float, default=6.0, show_default=True)
@click.option("--target", default="y", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--config", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def simulate(ctx, **params):
    """Draw a synthetic dataset and write it as CSV (response last)."""
    run_simulate(_merge_config(ctx, params))


@cli.command()
@_tuning_options
@click.pass_context
def estimate(ctx, **params):
    """Private sparse regression with private BIC choice of the sparsity."""
    params = _merge_config(ctx, params)
    _require_data(params)
    run_estimate(params)


@cli.command()
@_tuning_options
@click.option("--j", "j", type=int, multiple=True, help="Coordinate(s); default the first 10.")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--L", "L", type=float, default=1.0, show_default=True,
              help="Eigenvalue bound for the covariance.")
@click.option("--C-w", "C_w", type=float, default=None, help="Radius for precision columns (default 2L).")
@click.option("--gradient-sign", type=click.Choice(["descent", "literal"]), default="descent",
              show_default=True)
@click.option("--shared/--per-coordinate", default=False, show_default=True,
              help="Share one regression fit across coordinates.")
@click.pass_context
def ci(ctx, **params):
    """Private debiased confidence intervals (naive and noise-corrected)."""
    params = _merge_config(ctx, params)
    params["j"] = list(params["j"])
    _require_data(params)
    run_ci(params)


@cli.command()
@_tuning_options
@click.option("--q", type=float, default=0.1, show_default=True, help="Target FDR level.")
@click.option("--f-kind", type=click.Choice([k.value for k in MirrorKind]), default="min",
              show_default=True)
@click.pass_context
def fdr(ctx, **params):
    """Private variable selection with mirror-statistic FDR control."""
    params = _merge_config(ctx, params)
    _require_data(params)
    run_fdr(params)


@cli.command()
@click.argument("scenario")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--workers", type=int, default=None, help="Worker processes (env DPSPARSE_WORKERS wins).")
@click.option("--reps", type=int, default=None, help="Override the replication count.")
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.option("--noise", type=click.Choice([m.value for m in NoiseMode]), default=None)
def bench(**params):
    """Run a scenario file or a bundled profile (table1_desk, fdr_desk, ...)."""
    run_bench(params)


@cli.command("noise-calc")
@click.option("--mechanism", type=click.Choice(["laplace", "gaussian", "noisyht", "debias"]),
              required=True)
@click.option("--sensitivity", type=float, default=None)
@click.option("--epsilon", type=float, required=True)
@click.option("--delta", type=float, default=None)
@click.option("--s", type=int, default=None, help="Sparsity (noisyht).")
@click.option("--lam", type=float, default=None, help="Per-row bound lambda (noisyht).")
@click.option("--R", "R", type=float, default=None, help="Clipping level (debias).")
@click.option("--n", type=int, default=None, help="Sample size (debias).")
def noise_calc(mechanism, sensitivity, epsilon, delta, s, lam, R, n):
    """Print the noise scale a mechanism uses for the given parameters."""
    def need(**kw):
        missing = [k for k, v in kw.items() if v is None]
        if missing:
            raise click.UsageError(f"{mechanism} needs --{', --'.join(missing)}")
    if mechanism == "laplace":
        need(sensitivity=sensitivity)
        click.echo(f"laplace_scale={laplace_scale(sensitivity, epsilon)!r}")
    elif mechanism == "gaussian":
        need(sensitivity=sensitivity, delta=delta)
        click.echo(f"gaussian_std={gaussian_std(sensitivity, epsilon, delta)!r}")
    elif mechanism == "noisyht":
        need(s=s, lam=lam, delta=delta)
        click.echo(f"laplace_scale={NoisyHtParams(s, epsilon, delta, lam).noise_scale!r}")
    else:
        need(R=R, n=n, delta=delta)
        vc = debias_noise_variance(R, n, epsilon / 4, delta / 4)
        click.echo(f"V_c={vc!r} sd={math.sqrt(vc)!r}")


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--into", type=click.Path(file_okay=False), default=None,
              help="Directory for the replayed outputs (default: a temporary one).")
def replay(manifest, into):
    """Re-run a manifest and check the outputs are byte-identical."""
    m = read_manifest(manifest)
    target = Path(into) if into else Path(tempfile.mkdtemp(prefix="dpsparse-replay-"))
    target.mkdir(parents=True, exist_ok=True)
    if m.command == "bench":
        results, _ = run_suite(suite_from_manifest(m), target, suite_doc={**m.config, "seed": m.seed})
    elif m.command in RUNNERS:
        params = {k: v for k, v in m.config.items() if k != "non_private"}
        name = next(iter(m.outputs))
        params.update(seed=m.seed, out=str(target / name))
        RUNNERS[m.command](params)
    else:
        raise click.UsageError(f"manifest command {m.command!r} cannot be replayed")
    bad = [name for name, digest in m.outputs.items()
           if not (target / name).exists() or _sha(target / name) != digest]
    if bad:
        raise click.ClickException(f"replay differs for {bad} (outputs in {target})")
    click.echo(f"replay identical: {', '.join(m.outputs)} (outputs in {target})")


RUNNERS = {"simulate": run_simulate, "estimate": run_estimate, "ci": run_ci, "fdr": run_fdr}


def _require_data(params):
    if not params.get("data"):
        raise click.UsageError("--data is required (directly or via --config)")


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    try:
        cli.main(args=argv, prog_name="dpsparse", standalone_mode=False)
    except click.exceptions.Exit as ex:
        return ex.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except DegenerateRun as err:
        err.show()
        return EXIT_DEGENERATE
    except click.ClickException as err:
        err.show()
        return EXIT_USAGE
    except (InvalidParameterError, BudgetExceededError, CsvParseError) as err:
        click.echo(f"Error: {err}", err=True)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
