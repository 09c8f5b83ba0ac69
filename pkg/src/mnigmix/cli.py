"""
Command-line interface: ``fit``, ``simulate`` and ``evaluate``.

Exit codes: 0 success, 2 input error, 3 fit failure, 4 schema error.
"""

import argparse
import csv
import json
import logging
import math
from pathlib import Path
import sys

import numpy as np

from . import load_bundled_model, BUNDLED_MODELS
from .distributions import make_rng
from .gibbs import FitError, GibbsConfig, PriorSpec
from .mnig import Dataset, MixtureModel, affine_component, generate_dataset
from .selection import adjusted_rand_index, contingency_table, select_model

__all__ = ["main", "read_csv", "write_csv", "InputError", "SchemaError"]

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_SCHEMA = 0, 2, 3, 4

log = logging.getLogger("mnigmix")

FIT_DEFAULTS = {
    "input": None,
    "gmin": 1,
    "gmax": 5,
    "iters": 2000,
    "chains": 3,
    "burnin": 0.5,
    "seed": 0,
    "scale": False,
    "out": None,
    "grid": 200,
    "plots": True,
    "inner_gig_steps": 10,
    "prior": {},
}
PRIOR_KEYS = {"a0", "a3", "a4", "dirichlet", "nu0", "lambda0"}


class InputError(Exception):
    pass


class SchemaError(Exception):
    pass


def read_csv(path, label_column="label", require_features=True):
    """
    Read a headed, comma-separated numeric table.

    Returns
    -------
    y : (n, d) ndarray
        Every column except ``label_column``.
    labels : ndarray or None
    columns : list of str
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise InputError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise InputError(f"{path} has a header but no data rows")
    if any(len(r) != len(header) for r in body):
        raise InputError(f"{path}: rows have differing numbers of fields")
    feature_idx = [j for j, h in enumerate(header) if h != label_column]
    if not feature_idx and require_features:
        raise InputError(f"{path} has no feature columns")
    try:
        table = np.array([[float(r[j]) for j in feature_idx] for r in body]).reshape(len(body), -1)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric value ({exc})") from exc
    if not np.all(np.isfinite(table)):
        raise InputError(f"{path}: missing or non-finite values")
    labels = None
    if label_column in header:
        j = header.index(label_column)
        raw = [r[j].strip() for r in body]
        try:
            labels = np.array([int(v) for v in raw])
        except ValueError:
            labels = np.array(raw)
    return table, labels, [header[j] for j in feature_idx]


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n",
                          encoding="utf-8")


def load_model_spec(source):
    """Bundled model name or path to a model JSON file."""
    if source in BUNDLED_MODELS:
        return load_bundled_model(source)
    try:
        spec = json.loads(Path(source).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read model spec {source}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model spec {source} is not valid JSON: {exc}") from exc
    try:
        return MixtureModel.from_dict(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid model spec {source}: {exc}") from exc


def resolve_fit_config(args):
    """Merge defaults, an optional JSON config file and explicit flags."""
    cfg = json.loads(json.dumps(FIT_DEFAULTS))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise SchemaError("config file must hold a JSON object")
        unknown = set(loaded) - set(FIT_DEFAULTS)
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in FIT_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if not isinstance(cfg["prior"], dict) or set(cfg["prior"]) - PRIOR_KEYS:
        raise SchemaError(f"prior overrides must be an object with keys from {sorted(PRIOR_KEYS)}")
    if cfg["input"] is None or cfg["out"] is None:
        raise InputError("fit needs --input and --out (flag or config file)")
    try:
        for key in ("gmin", "gmax", "iters", "chains", "seed", "grid", "inner_gig_steps"):
            cfg[key] = int(cfg[key])
        cfg["burnin"] = float(cfg["burnin"])
        cfg["scale"] = bool(cfg["scale"])
        cfg["plots"] = bool(cfg["plots"])
        cfg["input"] = str(cfg["input"])
        cfg["out"] = str(cfg["out"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad config value: {exc}") from exc
    if not 1 <= cfg["gmin"] <= cfg["gmax"]:
        raise InputError("need 1 <= gmin <= gmax")
    return cfg


def _model_block(model):
    return {"weights": model.weights,
            "components": [c.to_dict() for c in model.components]}


def _posterior_block(summary, center=None, scale=None):
    out = {}
    for name, stats in summary.items():
        out[name] = {k: v for k, v in stats.items()}
    if center is not None:
        # mu and beta intervals map elementwise through the affine change of units
        for k in ("mean", "lower", "upper"):
            out["mu"][k] = center + scale * summary["mu"][k]
        lo = summary["beta"]["lower"] / scale
        hi = summary["beta"]["upper"] / scale
        out["beta"] = {"mean": summary["beta"]["mean"] / scale,
                       "lower": np.minimum(lo, hi), "upper": np.maximum(lo, hi)}
        c = math.exp(2.0 * np.sum(np.log(np.abs(scale))) / scale.size)
        for k in ("mean", "lower", "upper"):
            out["delta"][k] = summary["delta"][k] * math.sqrt(c)
            out["gamma"][k] = summary["gamma"][k] / math.sqrt(c)
        del out["Delta"]
    return out


def cmd_fit(args):
    cfg = resolve_fit_config(args)
    y, labels, columns = read_csv(cfg["input"])
    n, d = y.shape
    if n < 2:
        raise InputError("need at least two observations")
    if cfg["gmax"] > n:
        raise InputError(f"gmax={cfg['gmax']} exceeds the {n} observations")
    center = scale = None
    y_fit = y
    if cfg["scale"]:
        center = y.mean(axis=0)
        scale = y.std(axis=0, ddof=1)
        if np.any(scale == 0):
            raise InputError("cannot scale a constant column")
        y_fit = (y - center) / scale
    data = Dataset(y_fit)
    try:
        gibbs_cfg = GibbsConfig(n_iterations=cfg["iters"], n_chains=cfg["chains"],
                                burnin_fraction=cfg["burnin"], seed=cfg["seed"],
                                inner_gig_steps=cfg["inner_gig_steps"])
        PriorSpec.default(d, cfg["gmin"], **cfg["prior"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid sampler or prior settings: {exc}") from exc
    result = select_model(data, range(cfg["gmin"], cfg["gmax"] + 1), config=gibbs_cfg,
                          prior_overrides=cfg["prior"])
    best = result.best

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    header = ["G", "loglik", "n_params", "bic", "aic", "converged", "psrf"]
    write_csv(out / "selection.csv", header,
              [[_fmt(getattr(r, h)) for h in header] for r in result.rows])
    write_csv(out / "classification.csv", ["label"], [[int(v)] for v in best.labels])

    trace_rows = []
    for G, res in sorted(result.fits.items()):
        for tr in res.traces:
            trace_rows += [[G, tr.chain_id + 1, t, _fmt(v)] for t, v in enumerate(tr.loglik)]
    write_csv(out / "traces.csv", ["G", "chain", "iteration", "loglik"], trace_rows)

    lines = ["G,psrf,converged,chains_ok,chains_failed"]
    for r in result.rows:
        res = result.fits[r.G]
        lines.append(f"{r.G},{_fmt(res.psrf) or 'NA'},{_fmt(res.converged)},"
                     f"{len(res.traces)},{len(res.failures)}")
    lines.append(f"# convergence flag: psrf < 1.1 on post-burn-in log-likelihood chains")
    (out / "psrf_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    model = best.model
    if cfg["scale"]:
        model = MixtureModel(best.model.weights,
                             [affine_component(c, center, scale) for c in best.model.components])
    summary = {
        # the output directory is left out so reruns elsewhere stay byte-identical
        "config": {k: v for k, v in cfg.items() if k != "out"},
        "selection_table": [r.as_dict() for r in result.rows],
        "best_G": result.best_G,
        "best_model": _model_block(model),
        "posterior": (_posterior_block(best.summary, center, scale)
                      if best.summary is not None else None),
        "diagnostics": {"psrf": None if math.isnan(best.psrf) else best.psrf,
                        "converged": best.converged,
                        "failed_chains": {str(k): v for k, v in best.failures.items()},
                        "failed_G": {str(k): v for k, v in result.failures.items()}},
        "classification_path": "classification.csv",
    }
    if cfg["scale"]:
        summary["scaling"] = {"center": center, "scale": scale}
        summary["best_model_scaled"] = _model_block(best.model)
    if labels is not None:
        summary["ari_vs_input_labels"] = adjusted_rand_index(labels, best.labels)
    _dump_json(out / "summary.json", summary)

    grid = None
    if d == 2:
        from .plotting import density_grid
        xs, ys, dens = density_grid(model, y, cfg["grid"])
        gx, gy = np.meshgrid(xs, ys)
        write_csv(out / "density_grid.csv", ["x", "y", "density"],
                  zip(map(_fmt, gx.ravel()), map(_fmt, gy.ravel()), map(_fmt, dens.ravel())))
        grid = (xs, ys, dens)
    if cfg["plots"]:
        _write_figures(out / "figures", y, columns, result, best, grid)
    print(f"best G = {result.best_G}; outputs in {out}")
    return EXIT_OK


def _write_figures(fig_dir, y, columns, result, best, grid):
    from . import plotting
    fig_dir.mkdir(exist_ok=True)
    rows = result.rows
    plotting.plot_selection(fig_dir / "selection.png", [r.G for r in rows],
                            [r.bic for r in rows], [r.aic for r in rows], result.best_G)
    plotting.plot_traces(fig_dir / "loglik_traces.png", best.loglik_matrix(), best.burnin,
                         title=f"G = {best.G}")
    if grid is not None:
        plotting.plot_contours(fig_dir / "contour.png", y, best.labels, *grid, columns=columns)
    elif y.shape[1] > 2:
        plotting.plot_pairs(fig_dir / "pairs.png", y, best.labels, columns)


def cmd_simulate(args):
    model = load_model_spec(args.spec)
    if args.n < 1:
        raise InputError("--n must be positive")
    data = generate_dataset(model, args.n, make_rng(args.seed), exact_counts=args.exact_counts)
    header = [f"y{j + 1}" for j in range(data.d)] + ["label"]
    rows = [[_fmt(v) for v in row] + [int(lab)] for row, lab in zip(data.y, data.labels)]
    write_csv(args.out, header, rows)
    return EXIT_OK


def _read_labels(path):
    y, labels, columns = read_csv(path, require_features=False)
    if labels is not None:
        return labels
    if len(columns) == 1:
        return y[:, 0]
    raise InputError(f"{path} needs a 'label' column or a single column")


def cmd_evaluate(args):
    truth = _read_labels(args.truth)
    est = _read_labels(args.est)
    if truth.shape != est.shape:
        raise InputError(f"label files differ in length: {truth.size} vs {est.size}")
    ari = adjusted_rand_index(truth, est)
    table, rows, cols = contingency_table(truth, est)
    print(f"ARI: {ari:.4f}")
    width = max(6, *(len(str(v)) for v in np.concatenate([rows, cols]).tolist()))
    print("truth\\est".ljust(width + 2) + "".join(str(c).rjust(width + 2) for c in cols))
    for r, counts in zip(rows, table):
        print(str(r).ljust(width + 2) + "".join(str(v).rjust(width + 2) for v in counts))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="mnigmix",
                                description="Bayesian MNIG mixture clustering by Gibbs sampling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit G = gmin..gmax and select by BIC")
    f.add_argument("--input")
    f.add_argument("--gmin", type=int)
    f.add_argument("--gmax", type=int)
    f.add_argument("--iters", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--burnin", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--scale", action="store_const", const=True,
                   help="z-score columns before fitting")
    f.add_argument("--out")
    f.add_argument("--config", help="JSON file of settings; flags override it")
    f.add_argument("--grid", type=int, help="density grid resolution for d = 2 (default 200)")
    f.add_argument("--no-plots", dest="plots", action="store_const", const=False)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="draw a labelled dataset from a model")
    s.add_argument("--spec", required=True, help=f"model JSON or one of {BUNDLED_MODELS}")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--exact-counts", action="store_true",
                   help="group sizes round(n * weights) instead of multinomial")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="ARI and cross-tabulation of two labelings")
    e.add_argument("--truth", required=True)
    e.add_argument("--est", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
