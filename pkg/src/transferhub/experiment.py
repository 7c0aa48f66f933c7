"""End-to-end protocol on a (synthetic) model hub.

For every park-level fold, every target park, season and training-window
length, all configured methods are trained on the target's limited data and
scored on the target's held-out test days.  Results go to ``errors.csv``
(one row per park, season, days and method) and ``summary.csv`` (mean ranks
plus a Wilcoxon verdict against the GBRT baseline).
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import blr
from .adaptation import (
    POOLED,
    BtContext,
    Forecaster,
    adapt_belm_online,
    adapt_direct,
    adapt_direct_linear,
    finetune,
)
from .dataset import (
    SEASONS,
    DatasetError,
    SplitSpec,
    TimeSeriesDataset,
    limit_training,
    load_csv,
    make_folds,
    split_days,
    split_test_days,
)
from .ensembles import (
    ETA_GRID,
    bma_fit,
    bma_predict,
    csge_cross_fit,
    csge_fit,
    csge_predict,
    csge_select_eta,
)
from .evaluation import crps_gaussian, nrmse, rank_table, verdict_marker, wilcoxon_signed_rank
from .models.belm import ACTIVATIONS, belm_search
from .models.gbrt import GBRT_DEPTH_GRID, GBRT_LR_GRID, gbrt_fit, gbrt_grid_search
from .models.mlp import train_source_mlp
from .seeding import derive_seed
from .selection import evidence_details, select
from .synth import gen_hub

log = logging.getLogger("transferhub")

METHODS = ("di", "dili", "online-belm", "wd", "wds", "bt", "bma", "csge", "gbrt")
BASELINE = "gbrt"
ERRORS_HEADER = ("dataset", "season", "days", "method", "park", "nrmse", "crps")
SUMMARY_HEADER = ("dataset", "days", "method", "mean_rank", "verdict")
CSGE_FOLDS = 3


class ConfigError(ValueError):
    """Bad configuration; maps to exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    hub_kind: str = "wind"
    n_parks: int = 10
    n_days: int = 365
    folds: int = 5
    days_grid: tuple = (7, 14, 30, 60, 90)
    seasons: tuple = SEASONS
    methods: tuple = METHODS
    seed: int = 0
    out_dir: str = "out"
    # desk-scale knobs beyond the core keys
    samples_per_day: int = 96
    test_fraction: float = 0.25
    hub_dir: str = ""
    per_horizon: bool = False
    bt_top: int = 10
    mlp_widen: tuple = (1, 2, 4)
    mlp_lr: tuple = (0.003, 0.01, 0.03)
    mlp_epochs: tuple = (20, 50)
    mlp_batch: int = 64
    belm_hidden: tuple = (50, 100, 200)
    belm_activations: tuple = ACTIVATIONS
    gbrt_lr: tuple = GBRT_LR_GRID
    gbrt_depth: tuple = GBRT_DEPTH_GRID
    gbrt_estimators: int = 300
    eta_grid: tuple = ETA_GRID
    finetune_epochs: int = 1
    ensemble_top: int = 3  # sources per model kind that enter the CSGE
    csge_gbrt: bool = True  # add a target-trained GBRT as a CSGE member
    bma_members: str = "belm"  # "belm" (online-updated BELMs) or "dili"

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method: {bad[0]}")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        bad = [s for s in self.seasons if s not in SEASONS]
        if bad:
            raise ConfigError(f"unknown season: {bad[0]}")
        if self.hub_kind not in ("wind", "pv"):
            raise ConfigError(f"unknown hub_kind: {self.hub_kind}")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.bma_members not in ("belm", "dili"):
            raise ConfigError(f"unknown bma_members: {self.bma_members}")
        if self.ensemble_top < 1:
            raise ConfigError("ensemble_top must be at least 1")
        if any(d < 1 for d in self.days_grid):
            raise ConfigError("days_grid entries must be positive")


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            sample = default[0] if default else ""
            if isinstance(sample, bool) or isinstance(sample, str):
                return tuple(items)
            if isinstance(sample, int):
                return tuple(int(s) for s in items)
            return tuple(float(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; lists are comma separated."""
    defaults = ExperimentConfig()
    known = {f.name: getattr(defaults, f.name) for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown config key: {key}")
        values[key] = _coerce(key, raw, known[key])
    if base_dir is not None:
        for key in ("out_dir", "hub_dir"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(base_dir / values[key])
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


# --- hub and source models ------------------------------------------------

@dataclass(frozen=True, eq=False)
class SourceEntry:
    park_id: str
    mlp: object
    mlp_val_nrmse: float
    belm: object | None = None
    belm_val_nrmse: float = math.nan


def load_hub_dir(hub_dir) -> list[TimeSeriesDataset]:
    hub_dir = Path(hub_dir)
    manifest = hub_dir / "hub.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"hub manifest not found: {manifest}")
    with manifest.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    hub = []
    for row in rows:
        path = hub_dir / f"{row['park_id']}.csv"
        if not path.exists():
            raise FileNotFoundError(f"park file not found: {path}")
        ds = load_csv(path, row["park_id"])
        hub.append(replace(ds, normalized=True, meta={"kind": row.get("kind", "")}))
    return hub


def build_hub(cfg: ExperimentConfig) -> list[TimeSeriesDataset]:
    if cfg.hub_dir:
        return load_hub_dir(cfg.hub_dir)
    return gen_hub(cfg.hub_kind, cfg.n_parks, cfg.n_days, cfg.seed, cfg.samples_per_day)


def _val_split(ds: TimeSeriesDataset, seed: int):
    kept, held = split_days(ds.n_days, 0.2, seed)
    return ds.select_days(kept), ds.select_days(held)


def train_source(ds: TimeSeriesDataset, cfg: ExperimentConfig, with_belm: bool) -> SourceEntry:
    """Source models see every day of their park; 20% of days validate the grid."""
    seed = derive_seed(cfg.seed, "source", ds.park_id)
    tr, va = _val_split(ds, seed)
    mlp, mlp_err, _ = train_source_mlp(
        tr.features, tr.power, va.features, va.power, seed,
        cfg.mlp_widen, cfg.mlp_lr, cfg.mlp_epochs, cfg.mlp_batch,
    )
    belm, belm_err = None, math.nan
    if with_belm:
        belm, _, _ = belm_search(tr.features, tr.power, va.features, va.power, seed,
                                 cfg.belm_hidden, cfg.belm_activations)
        belm_err = nrmse(va.power, belm.predict(va.features).mu)
    return SourceEntry(ds.park_id, mlp, mlp_err, belm, belm_err)


# --- one evaluation cell --------------------------------------------------

@dataclass
class CellResult:
    season: str
    days: int
    park: str
    scores: dict = field(default_factory=dict)  # method -> (nrmse, crps)


def _dili_member(source, fit: blr.EvidenceFit) -> Forecaster:
    head = fit.model
    prior = blr.GaussianLinear.prior(head.dim, head.alpha, head.beta)
    return Forecaster("DILI", source, {POOLED: head}, {POOLED: prior}, False, head.n_obs)


def run_cell(cfg: ExperimentConfig, train: TimeSeriesDataset, test: TimeSeriesDataset,
             sources: list[SourceEntry], season: str, days: int) -> CellResult:
    park = train.park_id
    data = limit_training(train, SplitSpec(season, days, allow_off_grid=True))
    X, y = data.features, data.power
    groups, horizon = data.day_of_row, data.horizon
    Xte, yte, hte = test.features, test.power, test.horizon
    methods = cfg.methods
    res = CellResult(season, days, park)

    def seed_for(method):
        return derive_seed(cfg.seed, park, season, days, method)

    def point_score(pred):
        return nrmse(yte, pred), float(np.mean(np.abs(yte - pred)))

    def gauss_score(pred):
        return nrmse(yte, pred.mu), float(np.mean(crps_gaussian(pred.mu, np.sqrt(pred.sigma2), yte)))

    cache = {}

    def mlp_details():
        if "details" not in cache:
            details = [evidence_details(s.mlp, X, y) for s in sources]
            order = sorted(range(len(sources)), key=lambda i: (-details[i].value, i))
            cache["details"] = (details, order, select([d.value for d in details], "evidence"))
        return cache["details"]

    def online_belms():
        # the online head starts from the source posterior, so rank by evidence under it
        if "online" not in cache:
            fcs = [adapt_belm_online(s.belm, X, y) for s in sources]
            ev = [fc.log_evidence(X, y) for fc in fcs]
            order = sorted(range(len(sources)), key=lambda i: (-ev[i], i))
            cache["online"] = (fcs, order)
        return cache["online"]

    def gbrt_params():
        if "gbrt" not in cache:
            cache["gbrt"], _ = gbrt_grid_search(X, y, cfg.gbrt_lr, cfg.gbrt_depth, cfg.gbrt_estimators, 3,
                                                seed_for("gbrt"), groups)
        return cache["gbrt"]

    def fit_gbrt(Xa, ya):
        p = gbrt_params()
        return gbrt_fit(Xa, ya, p["n_estimators"], p["lr"], p["max_depth"], seed_for("gbrt"))

    has_belm = all(s.belm is not None for s in sources)

    for method in methods:
        if method == "gbrt":
            res.scores[method] = point_score(fit_gbrt(X, y).predict(Xte))
        elif method == "di":
            details, _, best = mlp_details()
            res.scores[method] = point_score(adapt_direct(sources[best].mlp).point(Xte))
        elif method == "dili":
            details, _, best = mlp_details()
            chosen = sources[best].mlp
            fc = (adapt_direct_linear(chosen, X, y, True, horizon) if cfg.per_horizon
                  else _dili_member(chosen, details[best].fit))
            res.scores[method] = gauss_score(fc.predictive(Xte, hte))
        elif method == "online-belm":
            fcs, order = online_belms()
            res.scores[method] = gauss_score(fcs[order[0]].predictive(Xte))
        elif method in ("wd", "wds", "bt"):
            details, order, best = mlp_details()
            kind = method.upper()
            ctx = None
            if kind == "BT":
                top = order[: cfg.bt_top]
                ctx = BtContext(tuple(sources[i].mlp for i in top),
                                tuple(details[i].fit.model.mean for i in top))
            fc = finetune(sources[best].mlp, X, y, kind, seed_for(method), groups, ctx,
                          n_epochs=cfg.finetune_epochs)
            res.scores[method] = point_score(fc.point(Xte))
        elif method == "bma":
            if cfg.bma_members == "belm" and has_belm:
                members = online_belms()[0]
            else:
                details = mlp_details()[0]
                members = [_dili_member(s.mlp, d.fit) for s, d in zip(sources, details)]
            mix = bma_predict(bma_fit(members, X, y), Xte)
            res.scores[method] = (nrmse(yte, mix.mean), float(np.mean(mix.crps(yte, n=1001))))
        elif method == "csge":
            top_mlp = mlp_details()[1][: cfg.ensemble_top]
            top_belm = online_belms()[1][: cfg.ensemble_top] if has_belm else []

            def fit_members(Xa, ya):
                out = [_dili_member(sources[i].mlp, evidence_details(sources[i].mlp, Xa, ya).fit)
                       for i in top_mlp]
                out += [adapt_belm_online(sources[i].belm, Xa, ya) for i in top_belm]
                if cfg.csge_gbrt:
                    out.append(Forecaster("DI", fit_gbrt(Xa, ya)))
                return out

            if len(np.unique(groups)) >= CSGE_FOLDS:
                model = csge_cross_fit(fit_members, X, y, horizon, groups, seed_for(method), cfg.eta_grid,
                                       CSGE_FOLDS, train.samples_per_day)
            else:
                members = fit_members(X, y)
                eta = csge_select_eta(members, X, y, horizon, groups, seed_for(method), cfg.eta_grid,
                                      n_horizons=train.samples_per_day)
                model = csge_fit(members, X, y, horizon, (eta,) * 3, train.samples_per_day)
            res.scores[method] = point_score(csge_predict(model, Xte, hte))
    return res


def _run_cell_job(args):
    return run_cell(*args)


# --- reports --------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def summarize(rows: list[dict], methods) -> list[dict]:
    """Mean rank per (dataset, days, method) over (park, season) pairs, plus verdict vs GBRT."""
    out = []
    cells = sorted({(r["dataset"], int(r["days"])) for r in rows}, key=lambda c: (c[0], c[1]))
    for dataset, days in cells:
        sub = [r for r in rows if r["dataset"] == dataset and int(r["days"]) == days]
        keys = sorted({(r["park"], r["season"]) for r in sub})
        present = [m for m in methods if any(r["method"] == m for r in sub)]
        lookup = {(r["park"], r["season"], r["method"]): float(r["nrmse"]) for r in sub}
        keys = [k for k in keys if all((*k, m) in lookup for m in present)]
        if not keys:
            continue
        E = np.array([[lookup[(*k, m)] for m in present] for k in keys])
        ranks = rank_table(E)
        for j, m in enumerate(present):
            verdict = "o"
            if m != BASELINE and BASELINE in present:
                try:
                    verdict = verdict_marker(wilcoxon_signed_rank(E[:, j], E[:, present.index(BASELINE)]).verdict)
                except ValueError:
                    verdict = "o"
            out.append({"dataset": dataset, "days": days, "method": m, "mean_rank": float(ranks[j]),
                        "verdict": verdict})
    return out


def write_errors(path, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERRORS_HEADER)
        for r in rows:
            w.writerow([r["dataset"], r["season"], r["days"], r["method"], r["park"],
                        _fmt(r["nrmse"]), _fmt(r["crps"])])


def read_errors(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"errors file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["days"] = int(r["days"])
        r["nrmse"] = float(r["nrmse"])
        r["crps"] = float(r["crps"])
    return rows


def write_summary(path, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in rows:
            w.writerow([r["dataset"], r["days"], r["method"], _fmt(r["mean_rank"]), r["verdict"]])


def read_summary(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"summary file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["days"] = int(r["days"])
        r["mean_rank"] = float(r["mean_rank"])
    return rows


# --- driver ---------------------------------------------------------------

def n_workers() -> int:
    raw = os.environ.get("TRANSFERHUB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"TRANSFERHUB_THREADS must be an integer, got {raw!r}") from None


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _train_source_job(args):
    return train_source(*args)


def collect_errors(cfg: ExperimentConfig, hub=None, sources=None) -> list[dict]:
    """Run every cell and return error rows in a fixed order."""
    workers = n_workers()
    hub = build_hub(cfg) if hub is None else hub
    folds = make_folds(hub, cfg.folds)
    with_belm = bool({"online-belm", "bma", "csge"} & set(cfg.methods))
    if sources is None:
        log.info("training %d source models", len(hub))
        sources = _map(_train_source_job, [(ds, cfg, with_belm) for ds in hub], workers)
    jobs = []
    for fold in folds:
        fold_sources = [sources[i] for i in fold.sources]
        for t in fold.targets:
            ds = hub[t]
            train, test = split_test_days(ds, cfg.test_fraction, derive_seed(cfg.seed, "test", ds.park_id))
            for season in cfg.seasons:
                available = int(np.sum(train.day_seasons() == season))
                for days in cfg.days_grid:
                    if available < days:
                        log.warning("skipping %s/%s/%d: only %d days in season", ds.park_id, season, days,
                                    available)
                        continue
                    jobs.append((cfg, train, test, fold_sources, season, days))
    log.info("evaluating %d cells", len(jobs))
    results = _map(_run_cell_job, jobs, workers)
    dataset = cfg.hub_kind
    season_pos = {s: i for i, s in enumerate(SEASONS)}
    method_pos = {m: i for i, m in enumerate(cfg.methods)}
    rows = [
        {"dataset": dataset, "season": r.season, "days": r.days, "method": m, "park": r.park,
         "nrmse": v[0], "crps": v[1]}
        for r in results for m, v in r.scores.items()
    ]
    rows.sort(key=lambda r: (season_pos[r["season"]], r["days"], method_pos[r["method"]], r["park"]))
    return rows


def run_experiment(cfg: ExperimentConfig | str | Path, overwrite: bool = False) -> int:
    """Run the protocol and write ``errors.csv`` and ``summary.csv``; returns 0."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    out = Path(cfg.out_dir)
    if not overwrite and any((out / name).exists() for name in ("errors.csv", "summary.csv")):
        raise ConfigError(f"{out} already holds results; use a clean out_dir")
    rows = collect_errors(cfg)
    if not rows:
        raise DatasetError("no cell had enough days for the requested seasons and windows")
    out.mkdir(parents=True, exist_ok=True)
    write_errors(out / "errors.csv", rows)
    write_summary(out / "summary.csv", summarize(rows, cfg.methods))
    return 0
