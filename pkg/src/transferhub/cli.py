"""Command line entry point: the full experiment plus stage-wise artifact plumbing.

Exit codes: 0 success, 1 runtime failure (including missing upstream files),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adaptation import (
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
    normalize_power,
    write_csv,
)
from .ensembles import BmaModel, CsgeModel, bma_predict, csge_predict
from .evaluation import crps_gaussian, nrmse
from .experiment import (
    BASELINE,
    ConfigError,
    ExperimentConfig,
    load_config,
    load_hub_dir,
    read_summary,
    run_experiment,
    train_source,
)
from .models.belm import Belm
from .selection import evidence_details, score_nrmse, select
from .serialization import load_model, save_model
from .synth import gen_hub

log = logging.getLogger("transferhub")

MARKERS = {"v": "∨", "^": "∧", "o": "◇"}
STRATEGIES = ("di", "dili", "online", "wd", "wds", "bt")


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"expected file not found: {path}")
    return path


def _write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path) -> list[dict]:
    with _require(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _target(args) -> TimeSeriesDataset:
    ds = load_csv(_require(args.target))
    if args.nominal:
        ds = normalize_power(ds, args.nominal)
    if args.days:
        ds = limit_training(ds, SplitSpec(args.season, args.days, allow_off_grid=True))
    return ds


def _hub_models(models_dir, kind: str):
    """(park_id, model) pairs of one kind listed in the hub manifest."""
    models_dir = Path(models_dir)
    rows = _read_rows(models_dir / "manifest.csv")
    out = [(r["park_id"], load_model(_require(models_dir / r["file"]))) for r in rows if r["kind"] == kind]
    if not out:
        raise DatasetError(f"no {kind} models listed in {models_dir / 'manifest.csv'}")
    return out


# --- subcommands ----------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    return run_experiment(cfg, overwrite=args.force)


def cmd_synth_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hub = gen_hub(args.kind, args.n_parks, args.n_days, args.seed, args.samples_per_day)
    rows = []
    for ds in hub:
        write_csv(ds, out / f"{ds.park_id}.csv")
        params = {k: v for k, v in ds.meta.items() if k not in ("kind", "seed")}
        rows.append([ds.park_id, ds.meta["kind"], ds.meta["seed"], json.dumps(params, sort_keys=True)])
    _write_rows(out / "hub.csv", ("park_id", "kind", "seed", "params"), rows)
    print(f"wrote {len(hub)} parks to {out}")
    return 0


def cmd_train_hub(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    hub = load_hub_dir(args.hub)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for ds in hub:
        entry = train_source(ds, cfg, not args.no_belm)
        save_model(entry.mlp, out / f"{ds.park_id}_mlp.json")
        rows.append([ds.park_id, "mlp", f"{ds.park_id}_mlp.json", _fmt(entry.mlp_val_nrmse)])
        if entry.belm is not None:
            save_model(entry.belm, out / f"{ds.park_id}_belm.json")
            rows.append([ds.park_id, "belm", f"{ds.park_id}_belm.json", _fmt(entry.belm_val_nrmse)])
        log.info("trained %s", ds.park_id)
    _write_rows(out / "manifest.csv", ("park_id", "kind", "file", "val_nrmse"), rows)
    print(f"trained {len(hub)} parks into {out}")
    return 0


def _evidence(model, X, y) -> float:
    if isinstance(model, Belm):
        return adapt_direct(model).log_evidence(X, y)
    return evidence_details(model, X, y).value


def cmd_select(args) -> int:
    ds = _target(args)
    models = _hub_models(args.models, args.kind)
    X, y = ds.features, ds.power
    ev = [_evidence(m, X, y) for _, m in models]
    nr = [score_nrmse(m, X, y, args.seed, ds.day_of_row) for _, m in models]
    by_ev, by_nr = select(ev, "evidence"), select(nr, "nrmse")
    rows = [[pid, _fmt(e), _fmt(n), int(i == by_ev), int(i == by_nr)]
            for i, ((pid, _), e, n) in enumerate(zip(models, ev, nr))]
    header = ("source_park", "evidence", "nrmse", "selected_by_evidence", "selected_by_nrmse")
    if args.out:
        _write_rows(args.out, header, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return 0


def cmd_adapt(args) -> int:
    ds = _target(args)
    X, y = ds.features, ds.power
    kind = "belm" if args.strategy == "online" else "mlp"
    models = _hub_models(args.models, kind)
    ev = [_evidence(m, X, y) for _, m in models]
    if args.source:
        ids = [pid for pid, _ in models]
        if args.source not in ids:
            raise DatasetError(f"source park {args.source} has no {kind} model in the hub")
        best = ids.index(args.source)
    else:
        best = select(ev, "evidence")
    park, source = models[best]
    candidates = []
    if args.strategy == "di":
        fc = adapt_direct(source)
    elif args.strategy == "dili":
        fc = adapt_direct_linear(source, X, y, args.per_horizon, ds.horizon)
    elif args.strategy == "online":
        fc = adapt_belm_online(source, X, y)
    else:
        ctx = None
        if args.strategy == "bt":
            order = sorted(range(len(models)), key=lambda i: (-ev[i], i))[: args.bt_top]
            details = [evidence_details(models[i][1], X, y) for i in order]
            ctx = BtContext(tuple(models[i][1] for i in order), tuple(d.fit.model.mean for d in details))
        fc = finetune(source, X, y, args.strategy.upper(), args.seed, ds.day_of_row, ctx)
        chosen = (fc.info.get("lr"), fc.info.get("lam"))
        candidates = [[park, args.strategy, _fmt(c.lr), _fmt(c.lam), _fmt(c.val_nrmse), int(c.diverged),
                       int((c.lr, c.lam) == chosen)] for c in fc.info["log"]]
    if not candidates:
        candidates = [[park, args.strategy, "", "", "", 0, 1]]
    save_model(fc, args.out)
    if args.log:
        _write_rows(args.log, ("source_park", "strategy", "lr", "lam", "val_nrmse", "diverged", "chosen"),
                    candidates)
    print(f"adapted {park} with {args.strategy} -> {args.out}")
    return 0


def forecast(model, ds: TimeSeriesDataset):
    """(mu, sigma2 or None) of any saved model type on a dataset."""
    X, h = ds.features, ds.horizon
    if isinstance(model, Forecaster):
        if model.probabilistic:
            p = model.predictive(X, h)
            return p.mu, p.sigma2
        return model.point(X, h), None
    if isinstance(model, Belm):
        p = model.predict(X)
        return p.mu, p.sigma2
    if isinstance(model, BmaModel):
        mix = bma_predict(model, X, h)
        return mix.mean, mix.variance
    if isinstance(model, CsgeModel):
        return csge_predict(model, X, h), None
    return np.asarray(model.predict(X), dtype=float), None


def cmd_forecast(args) -> int:
    model = load_model(args.model)
    ds = load_csv(_require(args.data))
    mu, s2 = forecast(model, ds)
    header = ("timestamp", "horizon", "mu") + (("sigma2",) if s2 is not None else ())
    ts = ds.timestamps.astype("datetime64[s]").astype(str)
    rows = []
    for i in range(len(mu)):
        row = [f"{ts[i]}Z", int(ds.horizon[i]), _fmt(mu[i])]
        if s2 is not None:
            row.append(_fmt(s2[i]))
        rows.append(row)
    _write_rows(args.out, header, rows)
    return 0


def evaluate_files(pred_path, truth_path) -> dict:
    rows = _read_rows(pred_path)
    truth = load_csv(_require(truth_path))
    ts = {t: i for i, t in enumerate(truth.timestamps.astype("datetime64[s]").astype(str))}
    idx = []
    for r in rows:
        key = r["timestamp"].rstrip("Z")
        if key not in ts:
            raise DatasetError(f"prediction timestamp {r['timestamp']} missing from {truth_path}")
        idx.append(ts[key])
    y = truth.power[idx]
    mu = np.array([float(r["mu"]) for r in rows])
    out = {"n": len(y), "nrmse": nrmse(y, mu)}
    if rows and "sigma2" in rows[0]:
        s2 = np.array([float(r["sigma2"]) for r in rows])
        out["crps"] = float(np.mean(crps_gaussian(mu, np.sqrt(s2), y)))
    else:
        out["crps"] = float(np.mean(np.abs(y - mu)))
    return out


def cmd_evaluate(args) -> int:
    res = evaluate_files(args.predictions, args.truth)
    lines = [f"{k},{v if k == 'n' else repr(v)}" for k, v in res.items()]
    text = "metric,value\n" + "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def render_report(rows: list[dict]) -> str:
    """Mean ranks as a method x days table per dataset; markers compare against the baseline."""
    out = []
    for dataset in sorted({r["dataset"] for r in rows}):
        sub = [r for r in rows if r["dataset"] == dataset]
        days = sorted({r["days"] for r in sub})
        methods = list(dict.fromkeys(r["method"] for r in sub))
        cell = {}
        for r in sub:
            mark = " " if r["method"] == BASELINE else MARKERS.get(r["verdict"], "?")
            cell[(r["method"], r["days"])] = f"{r['mean_rank']:.2f} {mark}"
        width = max(len(m) for m in methods + ["method"])
        cols = [max(len(str(d)), *(len(cell.get((m, d), "")) for m in methods)) for d in days]
        out.append(f"dataset: {dataset}")
        out.append("  ".join(["method".ljust(width)] + [str(d).rjust(c) for d, c in zip(days, cols)]))
        for m in methods:
            out.append("  ".join([m.ljust(width)] + [cell.get((m, d), "-").rjust(c) for d, c in zip(days, cols)]))
        out.append("")
    out.append(f"{MARKERS['v']} better than {BASELINE}, {MARKERS['^']} worse, {MARKERS['o']} no significant difference")
    return "\n".join(out) + "\n"


def cmd_report(args) -> int:
    text = render_report(read_summary(args.summary))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# --- parser ---------------------------------------------------------------

def _add_target(p):
    p.add_argument("target", help="target park CSV")
    p.add_argument("--season", choices=SEASONS, default="winter")
    p.add_argument("--days", type=int, default=0, help="keep only the latest N days of --season (0 = all)")
    p.add_argument("--nominal", type=float, default=0.0, help="divide power by this nominal capacity")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transferhub", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full experiment from a config file")
    p.add_argument("config")
    p.add_argument("--force", action="store_true", help="overwrite results already in out_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth-gen", help="write a synthetic hub (park CSVs + hub.csv)")
    p.add_argument("--kind", choices=("wind", "pv"), default="wind")
    p.add_argument("--n-parks", type=int, default=10)
    p.add_argument("--n-days", type=int, default=365)
    p.add_argument("--samples-per-day", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train-hub", help="train one MLP (and BELM) per hub park")
    p.add_argument("hub", help="directory written by synth-gen")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="config file supplying the training grids")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-belm", action="store_true")
    p.set_defaults(func=cmd_train_hub)

    p = sub.add_parser("select", help="score every hub model on target data")
    p.add_argument("models", help="directory written by train-hub")
    _add_target(p)
    p.add_argument("--kind", choices=("mlp", "belm"), default="mlp")
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("adapt", help="adapt the evidence-selected source to the target")
    p.add_argument("models", help="directory written by train-hub")
    _add_target(p)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--per-horizon", action="store_true")
    p.add_argument("--source", help="park id to adapt instead of the evidence choice")
    p.add_argument("--bt-top", type=int, default=10)
    p.add_argument("--out", required=True, help="adapted model file")
    p.add_argument("--log", help="candidate log CSV")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("forecast", help="predict with a saved model")
    p.add_argument("model")
    p.add_argument("data", help="CSV with the model's feature columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="nRMSE and CRPS of a predictions CSV")
    p.add_argument("predictions")
    p.add_argument("truth", help="CSV holding the observed power")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render summary.csv as a rank table")
    p.add_argument("summary")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
