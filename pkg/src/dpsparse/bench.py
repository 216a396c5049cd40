"""Monte Carlo benchmark harness.

A scenario fixes one design (X and beta are drawn once from the scenario
seed) and replays fresh noise vectors ``reps`` times, running each requested
method and aggregating coverage/length or FDR/power. Replications are
independent and may run in worker processes; results are always reduced in
replication order so the output does not depend on scheduling.
"""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import LassoConfig, _lasso_fit, debiased_lasso_ci, nonprivate_mirror_fdr
from .fdr import MirrorConfig, MirrorKind, dp_fdr_pipeline, noise_bounds
from .inference import dp_confidence_interval
from .mechanisms import InvalidParameterError, NoiseMode, PrivacyBudget
from .precision import precision_config
from .regression import Dataset, compute_K, regression_config
from .report import RunManifest, config_hash, rows_to_csv, write_manifest
from .synth import DesignSpec, draw_coefficients, draw_design, draw_response

log = logging.getLogger(__name__)

INFERENCE_METHODS = ("dp_corrected", "dp_naive", "db_lasso")
FDR_METHODS = ("dp_fdr", "nonprivate_fdr")
ALL_METHODS = INFERENCE_METHODS + FDR_METHODS
DEGENERATE_LIMIT = 0.10
WORKERS_ENV = "DPSPARSE_WORKERS"

METRIC_COLUMNS = ["scenario_id", "method", "rho", "n", "p", "amplitude", "avg_coverage",
                  "avg_length", "empirical_fdr", "avg_power", "reps", "degenerate", "errors",
                  "eps_charged", "delta_charged", "budget_ok"]
REP_COLUMNS = ["scenario_id", "rep", "method", "j", "beta_j", "estimate", "lo", "hi", "covered",
               "length", "z", "fdp", "power", "size_A", "n_selected", "n_below", "tau",
               "degenerate",
               "eps_charged", "delta_charged", "error"]


@dataclass(frozen=True)
class ScenarioConfig:
    design: DesignSpec
    methods: tuple = ("dp_corrected", "dp_naive", "db_lasso")
    epsilon: float = 0.5
    delta: float | str = "auto"
    reps: int = 100
    alpha: float = 0.05
    q: float = 0.1
    seed: int = 0
    track: tuple | None = None
    K: int | None = None
    T: int | None = None
    eta0: float = 0.5
    C: float | None = None
    C_w: float | None = None
    c0: float = 1.0
    f_kind: str = "min"
    noise: str = "calibrated"
    nodewise_lam: float | str = "universal"
    redraw_design: bool = False
    scenario_id: str = ""

    def __post_init__(self):
        if self.reps < 1:
            raise InvalidParameterError("reps must be >= 1")
        if not self.methods:
            raise InvalidParameterError("method set is empty")
        bad = set(self.methods) - set(ALL_METHODS)
        if bad:
            raise InvalidParameterError(f"unknown methods {sorted(bad)}")

    @property
    def delta_value(self) -> float:
        if self.delta == "auto":
            return self.design.n ** -1.1
        return float(self.delta)

    @property
    def tracked(self) -> tuple:
        if self.track is not None:
            return tuple(int(j) for j in self.track)
        return tuple(range(min(10, self.design.p)))

    @property
    def nodewise_config(self) -> LassoConfig:
        """Node-wise Lasso tuning: "universal" is sqrt(2 log p / n), "cv" cross-validates."""
        if self.nodewise_lam == "cv":
            return LassoConfig(seed=self.seed)
        if self.nodewise_lam == "universal":
            d = self.design
            return LassoConfig(lam=math.sqrt(2 * math.log(max(d.p, 2)) / d.n))
        return LassoConfig(lam=float(self.nodewise_lam))

    @property
    def noise_mode(self) -> NoiseMode:
        return NoiseMode(self.noise)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["track"] = None if self.track is None else list(self.track)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        d = dict(d)
        d["design"] = DesignSpec(**d["design"])
        d["methods"] = tuple(d.get("methods", cls.methods))
        if d.get("track") is not None:
            d["track"] = tuple(d["track"])
        return cls(**d)


def expand_suite(doc: dict) -> list[ScenarioConfig]:
    """Turn a suite document (base scenario plus optional ``sweep``) into scenarios.

    ``sweep`` maps one key to a list of values; design fields (rho, n, p,
    amplitude, ...) and scenario fields are both accepted.
    """
    doc = dict(doc)
    name = doc.pop("name", "scenario")
    sweep = doc.pop("sweep", None)
    base = ScenarioConfig.from_dict(doc)
    if not sweep:
        return [replace(base, scenario_id=base.scenario_id or name)]
    if len(sweep) != 1:
        raise InvalidParameterError("sweep must vary exactly one key")
    (key, values), = sweep.items()
    design_fields = set(base.design.to_dict())
    out = []
    for v in values:
        if key in design_fields:
            sc = replace(base, design=base.design.with_(**{key: v}))
        else:
            sc = replace(base, **{key: v})
        out.append(replace(sc, scenario_id=f"{name}:{key}={v}"))
    return out


def load_suite(path) -> tuple[dict, list[ScenarioConfig]]:
    doc = json.loads(Path(path).read_text())
    return doc, expand_suite(doc)


def eigen_bound(design: DesignSpec) -> float:
    """L with 1/L <= eigenvalues(Sigma) <= L for the population covariance."""
    rho = abs(design.rho)
    if design.covariance == "identity" or rho == 0:
        return 1.0
    if design.covariance == "toeplitz":
        return (1 + rho) / (1 - rho)
    return max(1 + 3 * rho, 1 / (1 - rho))


@dataclass
class _Fixed:
    X: np.ndarray
    beta: np.ndarray
    support: np.ndarray


_design_cache: dict = {}


def _fixed_design(cfg: ScenarioConfig, rep_rng=None) -> _Fixed:
    if cfg.redraw_design and rep_rng is not None:
        X = draw_design(cfg.design, rep_rng)
        beta, S = _fixed_coefficients(cfg)
        return _Fixed(X, beta, S)
    key = (cfg.design, cfg.seed)
    if key not in _design_cache:
        _design_cache.clear()
        ss = np.random.SeedSequence(cfg.seed).spawn(2)
        X = draw_design(cfg.design, np.random.default_rng(ss[0]))
        beta, S = draw_coefficients(cfg.design, np.random.default_rng(ss[1]))
        _design_cache[key] = _Fixed(X, beta, S)
    return _design_cache[key]


def _fixed_coefficients(cfg):
    ss = np.random.SeedSequence(cfg.seed).spawn(2)
    return draw_coefficients(cfg.design, np.random.default_rng(ss[1]))


def tuning(cfg: ScenarioConfig, beta: np.ndarray, n: int | None = None):
    """Regression and precision IHT configs for a scenario."""
    d = cfg.design
    n = n or d.n
    cx = d.cx if d.cx is not None else 6.0
    L = eigen_bound(d)
    C = cfg.C or max(1.5 * float(np.linalg.norm(beta)), 1.0)
    C_w = cfg.C_w or 2.0 * L
    common = dict(eta0=cfg.eta0, T=cfg.T, K=cfg.K, noise_mode=cfg.noise_mode)
    beta_cfg = regression_config(n, max(d.sigma, 1e-8), cx, C, **common)
    w_cfg = precision_config(n, L, cx, C_w, **common)
    return beta_cfg, w_cfg


def _rep_seeds(cfg: ScenarioConfig, rep: int):
    root = np.random.SeedSequence([cfg.seed, rep + 1])
    return root.spawn(5)  # noise, dp ci, db lasso, dp fdr, nonprivate fdr


def _base_row(cfg, rep, method, **kw):
    row = {c: "" for c in REP_COLUMNS}
    row.update(scenario_id=cfg.scenario_id, rep=rep, method=method)
    row.update(kw)
    return row


def _n_below(sel) -> int:
    """#{M < -tau}: the numerator of the cutoff's false-discovery ratio."""
    return int(np.sum(sel.mirrors < -sel.tau)) if sel.mirrors.size else 0


def run_replication(cfg: ScenarioConfig, rep: int) -> list[dict]:
    """All methods on one fresh noise draw; returns per-(method, j) rows."""
    seeds = _rep_seeds(cfg, rep)
    noise_rng = np.random.default_rng(seeds[0])
    fx = _fixed_design(cfg, noise_rng)
    y = draw_response(fx.X, fx.beta, cfg.design.sigma, noise_rng)
    data = Dataset(fx.X, y)
    eps, delta = cfg.epsilon, cfg.delta_value
    beta_cfg, w_cfg = tuning(cfg, fx.beta)
    rows: list[dict] = []
    methods = set(cfg.methods)

    if methods & {"dp_corrected", "dp_naive"}:
        rng = np.random.default_rng(seeds[1])
        for j in cfg.tracked:
            budget = PrivacyBudget(eps, delta)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    res = dp_confidence_interval(data, j, cfg.alpha, budget, beta_cfg, w_cfg,
                                                 rng, c0=cfg.c0)
            except Exception as err:  # recorded, run continues
                for m in ("dp_corrected", "dp_naive"):
                    if m in methods:
                        rows.append(_base_row(cfg, rep, m, j=j, beta_j=fx.beta[j],
                                              error=repr(err)))
                continue
            charged = dict(eps_charged=budget.spent_epsilon, delta_charged=budget.spent_delta)
            for m, ci in (("dp_corrected", res.ci_corrected), ("dp_naive", res.ci_naive)):
                if m not in methods:
                    continue
                rows.append(_base_row(
                    cfg, rep, m, j=j, beta_j=float(fx.beta[j]), estimate=res.beta_db,
                    lo=ci[0], hi=ci[1], covered=int(ci[0] <= fx.beta[j] <= ci[1]),
                    length=ci[1] - ci[0], z=res.studentized(float(fx.beta[j])),
                    degenerate=int(res.degenerate), **charged))

    if "db_lasso" in methods:
        lcfg = LassoConfig(seed=cfg.seed)
        try:
            fit = _lasso_fit(data.X, data.y, lcfg)
        except Exception as err:
            fit = None
            for j in cfg.tracked:
                rows.append(_base_row(cfg, rep, "db_lasso", j=j, error=repr(err)))
        if fit is not None:
            for j in cfg.tracked:
                try:
                    r = debiased_lasso_ci(data, j, cfg.alpha, lcfg, cfg.nodewise_config, fit=fit)
                except Exception as err:
                    rows.append(_base_row(cfg, rep, "db_lasso", j=j, error=repr(err)))
                    continue
                rows.append(_base_row(
                    cfg, rep, "db_lasso", j=j, beta_j=float(fx.beta[j]), estimate=r.point,
                    lo=r.lo, hi=r.hi, covered=int(r.lo <= fx.beta[j] <= r.hi),
                    length=r.hi - r.lo, degenerate=0))

    kind = MirrorKind(cfg.f_kind)
    if "dp_fdr" in methods:
        rng = np.random.default_rng(seeds[3])
        budget = PrivacyBudget(eps, delta)
        try:
            n1 = (data.n + 1) // 2
            K = compute_K(n1, data.p, beta_cfg.log_base, beta_cfg.K, beta_cfg.K_max)
            b1, b2 = noise_bounds(data.n, beta_cfg.cx, beta_cfg.R, 2 ** K)
            mcfg = MirrorConfig(f_kind=kind, q=cfg.q, B1=b1, B2=b2)
            fdr_cfg = beta_cfg.with_(T=min(beta_cfg.T, n1))
            sel = dp_fdr_pipeline(data, fdr_cfg, mcfg, budget, rng, truth=fx.support, c0=cfg.c0)
            rows.append(_base_row(
                cfg, rep, "dp_fdr", fdp=sel.fdp, power=sel.power, size_A=sel.support_A.size,
                n_selected=sel.selected.size, n_below=_n_below(sel), tau=sel.tau,
                degenerate=int(any(f.startswith("degenerate") for f in sel.flags)),
                eps_charged=budget.spent_epsilon, delta_charged=budget.spent_delta))
        except Exception as err:
            rows.append(_base_row(cfg, rep, "dp_fdr", error=repr(err)))

    if "nonprivate_fdr" in methods:
        rng = np.random.default_rng(seeds[4])
        try:
            sel = nonprivate_mirror_fdr(data, cfg.q, kind, rng, truth=fx.support,
                                        lasso_cfg=LassoConfig(seed=cfg.seed))
            rows.append(_base_row(
                cfg, rep, "nonprivate_fdr", fdp=sel.fdp, power=sel.power,
                size_A=sel.support_A.size, n_selected=sel.selected.size,
                n_below=_n_below(sel), tau=sel.tau, degenerate=int(bool(sel.flags and "degenerate_refit" in sel.flags))))
        except Exception as err:
            rows.append(_base_row(cfg, rep, "nonprivate_fdr", error=repr(err)))
    return rows


def _run_one(args):
    cfg_dict, rep = args
    return run_replication(ScenarioConfig.from_dict(cfg_dict), rep)


def worker_count(requested: int | None = None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, requested or 1)


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else math.nan


def aggregate(cfg: ScenarioConfig, rows: list[dict]) -> list[dict]:
    out = []
    budget_target = (cfg.epsilon, cfg.delta_value)
    for m in cfg.methods:
        mine = [r for r in rows if r["method"] == m]
        ok = [r for r in mine if not r["error"]]
        charged = [(r["eps_charged"], r["delta_charged"]) for r in ok if r["eps_charged"] != ""]
        budget_ok = all(abs(e - budget_target[0]) <= 1e-12 and abs(d - budget_target[1]) <= 1e-12
                        for e, d in charged)
        row = {
            "scenario_id": cfg.scenario_id, "method": m, "rho": cfg.design.rho,
            "n": cfg.design.n, "p": cfg.design.p, "amplitude": cfg.design.amplitude,
            "avg_coverage": "", "avg_length": "", "empirical_fdr": "", "avg_power": "",
            "reps": cfg.reps,
            "degenerate": int(sum(int(r["degenerate"] or 0) for r in ok)),
            "errors": len(mine) - len(ok),
            "eps_charged": max((e for e, _ in charged), default=""),
            "delta_charged": max((d for _, d in charged), default=""),
            "budget_ok": int(budget_ok) if charged else "",
        }
        if m in INFERENCE_METHODS:
            row["avg_coverage"] = _mean([r["covered"] for r in ok])
            row["avg_length"] = _mean([r["length"] for r in ok])
        else:
            row["empirical_fdr"] = _mean([r["fdp"] for r in ok])
            row["avg_power"] = _mean([r["power"] for r in ok])
        out.append(row)
    return out


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    metrics: list[dict]
    reps: list[dict] = field(repr=False, default_factory=list)

    @property
    def degenerate_fraction(self) -> float:
        counted = [r for r in self.reps if r["method"] in ("dp_corrected", "dp_fdr")]
        if not counted:
            return 0.0
        bad = sum(1 for r in counted if r["error"] or int(r["degenerate"] or 0))
        return bad / len(counted)


def run_scenario(cfg: ScenarioConfig, workers: int | None = None) -> ScenarioResult:
    """Run every replication of one scenario and aggregate its MetricsRows."""
    nw = worker_count(workers)
    jobs = [(cfg.to_dict(), r) for r in range(cfg.reps)]
    if nw == 1:
        per_rep = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            per_rep = list(ex.map(_run_one, jobs))  # map preserves replication order
    rows = [r for rep_rows in per_rep for r in rep_rows]
    log.info("scenario %s: %d replications done", cfg.scenario_id, cfg.reps)
    return ScenarioResult(cfg, aggregate(cfg, rows), rows)


def run_suite(scenarios: list[ScenarioConfig], out_dir, workers: int | None = None,
              suite_doc: dict | None = None, command: str = "bench") -> tuple[list[ScenarioResult], Path]:
    """Run scenarios, write metrics.csv, replications.csv and manifest.json to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = [run_scenario(sc, workers) for sc in scenarios]
    metrics = [row for res in results for row in res.metrics]
    reps = [row for res in results for row in res.reps]
    (out / "metrics.csv").write_text(rows_to_csv(metrics, METRIC_COLUMNS))
    (out / "replications.csv").write_text(rows_to_csv(reps, REP_COLUMNS))
    doc = suite_doc if suite_doc is not None else {
        "scenarios": [sc.to_dict() for sc in scenarios]}
    seed = scenarios[0].seed if scenarios else 0
    manifest = RunManifest(
        seed=seed, config=_strip_seed(doc), command=command,
        budget_totals={sc.scenario_id: {"epsilon": sc.epsilon, "delta": sc.delta_value}
                       for sc in scenarios},
        outputs={name: _sha(out / name) for name in ("metrics.csv", "replications.csv")},
    )
    write_manifest(manifest, out / "manifest.json")
    return results, out


def _strip_seed(doc: dict) -> dict:
    doc = json.loads(json.dumps(doc))
    doc.pop("seed", None)
    for sc in doc.get("scenarios", []):
        sc.pop("seed", None)
    return doc


def _sha(path: Path) -> str:
    import hashlib
    return hashlib.sha256(path.read_bytes()).hexdigest()


def suite_from_manifest(manifest: RunManifest) -> list[ScenarioConfig]:
    doc = json.loads(json.dumps(manifest.config))
    if "scenarios" in doc:
        return [ScenarioConfig.from_dict({**sc, "seed": manifest.seed}) for sc in doc["scenarios"]]
    doc["seed"] = manifest.seed
    return expand_suite(doc)


__all__ = ["ScenarioConfig", "run_scenario", "run_suite", "expand_suite", "load_suite",
           "config_hash"]
