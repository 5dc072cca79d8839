"""Command-line front end: ``fmeval synth|perturb|eval|baseline|select-features|report``."""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import click
import numpy as np
import yaml

from fmeval import __version__
from fmeval.baselines.kernels import loads_kernel
from fmeval.config import RunConfig, load_config
from fmeval.datasets import load_adult, load_co2
from fmeval.domain import EvalMode, SeriesDataset, TabularDataset, read_dataset, write_dataset, write_series
from fmeval.errors import FmevalError, InvalidInput, SelectionFailure
from fmeval.evaluation import (
    CO2_KERNELS,
    GP,
    LLM_WITHOUT_DOMAIN,
    MLP,
    EvalReport,
    FeatureSubset,
    Split,
    feature_selection_eval,
    fit_series_gp,
    llm_select_features,
    make_split,
    mi_exhaustive,
    mi_greedy,
    regression_metrics,
    run_condition,
)
from fmeval.llm import LiveBackend, MockBackend, TranscriptLog
from fmeval.report import (
    SvgPlot,
    comparison_table,
    load_reports,
    render_text_table,
    table_csv,
    write_metrics,
    write_report,
)
from fmeval.synthetic import Family, make_spec, make_synthetic_task, gen_sampleset, dumps_spec, write_sampleset
from fmeval.transforms import (
    adult_recipe,
    co2_recipe,
    dumps_recipe,
    load_recipe,
    perturb_adult,
    perturb_series,
    perturb_tabular,
)
from fmeval.util import atomic_write_text, derive_seed, stable_hash

SYNTHETIC_MLP = {"mlp_hidden": 64, "mlp_learning_rate": 0.01, "mlp_epochs": 2000, "mlp_batch_size": 25}


def _error_record(command: str, exc: BaseException) -> dict:
    return {"command": command, "error": type(exc).__name__, "message": str(exc), "version": __version__}


def guarded(command: str):
    """Turn library errors into a JSON error record on stderr (and in the run dir) plus exit code 1."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except (FmevalError, OSError, ValueError, yaml.YAMLError) as exc:
                record = _error_record(command, exc)
                out = kwargs.get("out")
                if out:
                    try:
                        atomic_write_text(Path(out) / "error.json", json.dumps(record, indent=2) + "\n")
                    except OSError:
                        pass
                click.echo(json.dumps(record), err=True)
                sys.exit(1)

        return wrapper

    return deco


@click.group()
@click.version_option(__version__, prog_name="fmeval")
def main():
    """Evaluate in-context prediction with and without domain information."""


# -- synth / perturb -------------------------------------------------------------


def _parse_params(items) -> dict:
    params = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidInput(f"--param expects name=value, got {item!r}")
        try:
            params[key.strip()] = float(value)
        except ValueError:
            raise InvalidInput(f"--param {key} needs a number, got {value!r}") from None
    return params


@main.command()
@click.option("--family", type=click.Choice([f.value for f in Family]), required=True)
@click.option("--param", "params", multiple=True, help="Function parameter as name=value; repeatable.")
@click.option("--n", type=int, default=25, show_default=True)
@click.option("--noise-sd", type=float, default=0.0, show_default=True)
@click.option("--random-x", is_flag=True, help="Uniform random x instead of an even grid.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="CSV file to write (x,y).")
@guarded("synth")
def synth(family, params, n, noise_sd, random_x, seed, out):
    """Write a synthetic sample set and its spec (OUT and OUT.spec.yaml)."""
    spec = make_spec(family, _parse_params(params), noise_sd=noise_sd, seed=seed)
    samples = gen_sampleset(spec, n, random_x)
    write_sampleset(samples, out)
    atomic_write_text(Path(out).with_suffix(".spec.yaml"), dumps_spec(spec))
    click.echo(f"wrote {samples.n} rows to {out}")


def _resolve_recipe(recipe: str | None, kind: str, seed: int):
    if recipe in (None, "builtin"):
        return adult_recipe(seed) if kind == "tabular" else co2_recipe(seed)
    if recipe == "none":
        return None
    return replace(load_recipe(recipe), seed=seed)


@main.command()
@click.option("--dataset", required=True, help="'adult', 'co2', or a CSV path (with --schema).")
@click.option("--schema", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--recipe", default="builtin", show_default=True, help="Recipe YAML, 'builtin' or 'none'.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@guarded("perturb")
def perturb(dataset, schema, recipe, seed, out):
    """Apply an anti-memorization rewrite and write the result under OUT."""
    out_dir = Path(out)
    if dataset == "co2":
        rec = _resolve_recipe(recipe, "series", seed)
        series = load_co2()
        result = perturb_series(series, rec) if rec else series
        write_series(result, out_dir / "series.csv")
    else:
        if dataset == "adult":
            ds = load_adult()
        else:
            if schema is None:
                raise InvalidInput("CSV datasets need --schema")
            ds = read_dataset(dataset, schema)
        rec = _resolve_recipe(recipe, "tabular", seed)
        if rec is None:
            result = ds
        elif dataset == "adult":
            result = perturb_adult(ds, rec)
        else:
            result = perturb_tabular(ds, rec)
        write_dataset(result, out_dir / "data.csv", out_dir / "schema.yaml")
    if rec is not None:
        atomic_write_text(out_dir / "recipe.yaml", dumps_recipe(rec))
    click.echo(f"wrote perturbed {dataset} to {out_dir}")


# -- run plumbing ----------------------------------------------------------------


@dataclass
class RunData:
    dataset_id: str
    recipe_hash: str | None
    tabular: TabularDataset | None = None
    series: SeriesDataset | None = None
    fixed_split: Split | None = None  # synthetic tasks come with their own queries


def resolve_data(cfg: RunConfig) -> RunData:
    spec = cfg.dataset
    if spec.kind == "synthetic":
        fspec = make_spec(spec.family, spec.params, noise_sd=spec.noise_sd, seed=cfg.seed)
        task = make_synthetic_task(fspec, n=spec.n)
        return RunData(task.train.name, stable_hash(fspec.to_dict()), fixed_split=Split(task.train, task.queries))
    if spec.kind == "co2":
        rec = _resolve_recipe(spec.recipe, "series", cfg.seed)
        series = load_co2()
        series = perturb_series(series, rec) if rec else series
        return RunData("co2", stable_hash(rec.to_dict()) if rec else None, series=series)
    if spec.kind == "adult":
        ds = load_adult()
        rec = _resolve_recipe(spec.recipe, "tabular", cfg.seed)
        ds = perturb_adult(ds, rec) if rec else ds
        return RunData("adult", stable_hash(rec.to_dict()) if rec else None, tabular=ds)
    ds = read_dataset(spec.csv, spec.schema)
    rec = _resolve_recipe(spec.recipe, "tabular", cfg.seed) if spec.recipe not in ("builtin", "none") else None
    ds = perturb_tabular(ds, rec) if rec else ds
    return RunData(ds.name or Path(spec.csv).stem, stable_hash(rec.to_dict()) if rec else None, tabular=ds)


def _split_for(data: RunData, cfg: RunConfig, train_n: int) -> Split:
    if data.fixed_split is not None:
        return data.fixed_split
    if data.tabular is None:
        raise InvalidInput(f"dataset kind {cfg.dataset.kind!r} has no tabular split")
    return make_split(data.tabular, train_n, cfg.test_n, cfg.seed)


def _save_split(out: Path, data: RunData, sp: Split, tag: str) -> None:
    base = out / "data" / data.dataset_id
    write_dataset(sp.test, base / "test.csv", base / "schema.yaml")
    write_dataset(sp.train, base / f"train_{tag}.csv", base / "schema.yaml")
    # CSV rows do not carry ids; keep them so reports can be matched to the file
    atomic_write_text(base / "test_ids.json", json.dumps(sp.test_ids) + "\n")


def _write_run_meta(out: Path, cfg: RunConfig, command: str, dataset_id: str, seeds: dict) -> None:
    meta = {"command": command, "dataset_id": dataset_id, "version": __version__, "config": cfg.snapshot(),
            "seed": cfg.seed, "seed_derivation": seeds}
    atomic_write_text(out / "runs" / f"{command}__{dataset_id}.json",
                      json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _load_cfg(config, seed, mode, backend, out, dataset=None) -> RunConfig:
    if config:
        cfg = load_config(config)
        cfg = cfg.with_overrides(seed=seed, mode=mode, backend=backend, out=out)
    else:
        if seed is None:
            raise InvalidInput("a seed is required: pass --seed or a --config that sets it")
        cfg = RunConfig(seed=seed).with_overrides(mode=mode, backend=backend, out=out)
    if dataset:
        cfg = replace(cfg, dataset=replace(cfg.dataset, kind=dataset))
    return cfg


def _backend(cfg: RunConfig):
    if cfg.backend == "mock":
        return MockBackend(replace(cfg.client, repeats=1))
    return LiveBackend(cfg.client)


def _eval_config(cfg: RunConfig, data: RunData):
    ev = cfg.eval
    if data.fixed_split is not None:
        ev = replace(ev, **SYNTHETIC_MLP)
    return replace(ev, seed=cfg.seed)


def _fresh_transcript(path: Path) -> TranscriptLog:
    if path.exists():
        path.unlink()
    return TranscriptLog(path)


def common_options(fn):
    for opt in reversed([
        click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="Run config (YAML)."),
        click.option("--seed", type=int, default=None, help="Run seed; overrides the config."),
        click.option("--mode", type=click.Choice(["raw", "domain", "both"]), default=None,
                     help="raw: likelihood-only prompts; domain: posterior prompts; both."),
        click.option("--backend", type=click.Choice(["live", "mock"]), default=None),
        click.option("--dataset", type=click.Choice(["adult", "co2", "synthetic", "csv"]), default=None,
                     help="Override the config's dataset kind."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Run directory."),
    ]):
        fn = opt(fn)
    return fn


# -- eval ------------------------------------------------------------------------


@main.command(name="eval")
@common_options
@guarded("eval")
def eval_cmd(config, seed, mode, backend, dataset, out):
    """Run the LLM conditions selected by --mode on one shared split."""
    cfg = _load_cfg(config, seed, mode, backend, out, dataset)
    out_dir = Path(cfg.out)
    data = resolve_data(cfg)
    if data.series is not None:
        raise InvalidInput("the CO2 series is evaluated with 'fmeval baseline'")
    sp = _split_for(data, cfg, cfg.train_n)
    _save_split(out_dir, data, sp, "llm")
    ev = _eval_config(cfg, data)
    if cfg.backend == "live":
        ev = replace(ev, repeats=cfg.client.repeats)
    _write_run_meta(out_dir, cfg, "eval", data.dataset_id, {"split": cfg.seed,
                                          "train": derive_seed(cfg.seed, "train", str(cfg.train_n))})
    be = _backend(cfg)
    failures = 0
    try:
        for cond in cfg.conditions:
            tlog = _fresh_transcript(out_dir / "transcripts" / f"{data.dataset_id}__{cond}.jsonl")
            report = run_condition(cond, sp, ev, backend=be, transcript=tlog, dataset_id=data.dataset_id,
                                   recipe_hash=data.recipe_hash)
            write_report(report, out_dir)
            failures += report.metrics.n_extraction_failures
            click.echo(f"{data.dataset_id} {cond}: {_summary(report)}")
    finally:
        be.close()
    write_metrics(out_dir)
    click.echo(f"extraction failures: {failures}")


def _summary(report: EvalReport) -> str:
    m = report.metrics
    if m.accuracy is not None:
        return f"accuracy {m.accuracy:.4f} ± {m.accuracy_se:.4f} (n={m.n_test}, failures={m.n_extraction_failures})"
    return f"mse {m.mse:.6g} rmse {m.rmse:.6g} (n={m.n_test}, failures={m.n_extraction_failures})"


# -- baseline --------------------------------------------------------------------


@main.command()
@common_options
@guarded("baseline")
def baseline(config, seed, mode, backend, dataset, out):
    """MLP runs per train size (tabular), MLP + GP (synthetic), or GP kernels (CO2)."""
    cfg = _load_cfg(config, seed, mode, backend, out, dataset)
    out_dir = Path(cfg.out)
    data = resolve_data(cfg)
    ev = _eval_config(cfg, data)
    seeds = {}
    if data.series is not None:
        for kid in cfg.gp_kernels:
            kernel = CO2_KERNELS[kid]() if kid in CO2_KERNELS else loads_kernel(kid)
            kernel_id = kid if kid in CO2_KERNELS else f"custom{len(seeds)}"
            fit = fit_series_gp(data.series, kernel_id, kernel, restarts=ev.gp_restarts, steps=ev.gp_steps,
                                seed=cfg.seed)
            seeds[f"gp/{kernel_id}"] = derive_seed(cfg.seed, "co2", kernel_id)
            report = EvalReport(condition=GP, dataset_id=data.dataset_id, recipe_hash=data.recipe_hash,
                                metrics=regression_metrics(fit.mean, fit.test_y), config=ev.to_dict(),
                                train_n=len(data.series.window(hi=1981.0).points),
                                test_row_ids=list(range(len(fit.test_y))), predictions=fit.mean,
                                extra={**fit.to_dict(), "kernel_id": kernel_id})
            write_report(report, out_dir)
            click.echo(f"co2 gp[{kernel_id}]: rmse {fit.rmse:.4f}, peak period {fit.peak_period_months} months")
    elif data.fixed_split is not None:
        sp = data.fixed_split
        _save_split(out_dir, data, sp, "llm")
        for cond in (MLP, GP):
            report = run_condition(cond, sp, ev, dataset_id=data.dataset_id, recipe_hash=data.recipe_hash)
            write_report(report, out_dir)
            click.echo(f"{data.dataset_id} {cond}: {_summary(report)}")
        seeds["mlp/0"] = derive_seed(cfg.seed, "mlp", "0")
    else:
        for n in cfg.mlp_train_sizes:
            sp = _split_for(data, cfg, n)
            _save_split(out_dir, data, sp, str(n))
            ev_n = replace(ev, mlp_epochs=cfg.mlp_epochs_by_size.get(n, ev.mlp_epochs))
            report = run_condition(MLP, sp, ev_n, dataset_id=data.dataset_id, recipe_hash=data.recipe_hash)
            write_report(report, out_dir)
            seeds[f"train/{n}"] = derive_seed(cfg.seed, "train", str(n))
            click.echo(f"{data.dataset_id} mlp n={n}: {_summary(report)}")
        seeds.update({f"mlp/{s}": derive_seed(cfg.seed, "mlp", str(s)) for s in range(ev.mlp_seeds)})
    _write_run_meta(out_dir, cfg, "baseline", data.dataset_id, {"split": cfg.seed, **seeds})
    write_metrics(out_dir)


# -- feature selection -----------------------------------------------------------


@main.command(name="select-features")
@common_options
@click.option("--k", type=int, default=None, help="Number of features to select; overrides the config.")
@guarded("select-features")
def select_features(config, seed, mode, backend, dataset, out, k):
    """Ask the model for the top-k features, compare with MI oracles, and score each subset with the MLP."""
    cfg = _load_cfg(config, seed, mode, backend, out, dataset)
    k = k or cfg.select_k
    out_dir = Path(cfg.out)
    data = resolve_data(cfg)
    if data.tabular is None:
        raise InvalidInput("feature selection needs a tabular dataset")
    ds = data.tabular
    sp = make_split(ds, cfg.select_train_n, cfg.test_n, cfg.seed)
    ev = _eval_config(cfg, data)
    ev = replace(ev, mlp_epochs=cfg.mlp_epochs_by_size.get(cfg.select_train_n, ev.mlp_epochs))
    subsets: dict[str, FeatureSubset | None] = {}
    errors = {}
    be = _backend(cfg)
    tlog = _fresh_transcript(out_dir / "transcripts" / f"{data.dataset_id}__select.jsonl")
    try:
        for cond in cfg.conditions:
            m = EvalMode.LIKELIHOOD_ONLY if cond == LLM_WITHOUT_DOMAIN else EvalMode.POSTERIOR_FULL
            try:
                subsets[f"llm_{m.value}"] = llm_select_features(sp.train, k, m, be, n_examples=cfg.select_examples,
                                                                 seed=cfg.seed, transcript=tlog)
            except SelectionFailure as exc:
                errors[f"llm_{m.value}"] = str(exc)
    finally:
        be.close()
    subsets["mi_greedy"] = mi_greedy(sp.train, k)
    if len(ds.schema) <= 16:
        subsets["mi_exhaustive"] = mi_exhaustive(sp.train, k)
    rows = []
    for name, sub in subsets.items():
        metrics = feature_selection_eval(sub, sp, ev)
        rows.append({"selector": name, "features": list(sub.names), "k": sub.k, "mi_bits": sub.mi_bits,
                     "accuracy": metrics.accuracy, "accuracy_se": metrics.accuracy_se,
                     "repeat_sd": metrics.repeat_sd})
        click.echo(f"{name}: {', '.join(sub.names)} -> accuracy {metrics.accuracy:.4f}")
    doc = {"dataset_id": data.dataset_id, "k": k, "train_n": cfg.select_train_n, "results": rows,
           "failures": errors, "test_row_ids_hash": stable_hash(sp.test_ids)}
    atomic_write_text(out_dir / "selection.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_run_meta(out_dir, cfg, "select-features", data.dataset_id, {"split": cfg.seed,
                                                      "train": derive_seed(cfg.seed, "train", str(cfg.select_train_n))})


# -- report ----------------------------------------------------------------------


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@guarded("report")
def report(run_dir):
    """Render comparison tables (text + CSV) and SVG plots for RUN_DIR."""
    run = Path(run_dir)
    reports = load_reports(run)
    if not reports:
        raise InvalidInput(f"no reports found under {run / 'reports'}")
    out = run / "report"
    header, rows = comparison_table(reports)
    atomic_write_text(out / "table1.txt", render_text_table(header, rows))
    atomic_write_text(out / "table1.csv", table_csv(header, rows))
    gp_rows = [[r.dataset_id, r.extra.get("kernel_id", ""), f"{r.metrics.rmse:.4f}",
                str(r.extra.get("peak_period_months")), r.extra.get("kernel", "")]
               for r in reports if r.condition == GP]
    if gp_rows:
        gp_header = ["dataset", "kernel", "RMSE", "peak period (months)", "fitted kernel"]
        atomic_write_text(out / "gp.txt", render_text_table(gp_header, gp_rows))
        atomic_write_text(out / "gp.csv", table_csv(gp_header, gp_rows))
    for path in _plots(run, reports):
        click.echo(f"wrote {path}")
    write_metrics(run)
    click.echo(render_text_table(header, rows), nl=False)


def _plots(run: Path, reports: list[EvalReport]) -> list[Path]:
    written = []
    out = run / "report"
    for ds_id in sorted({r.dataset_id for r in reports}):
        mine = [r for r in reports if r.dataset_id == ds_id]
        series_fits = [r for r in mine if r.condition == GP and "test_x" in r.extra]
        if series_fits:
            plot = SvgPlot(f"{ds_id}: extrapolation", "year", "ppm")
            first = series_fits[0].extra
            plot.points(first["test_x"], first["test_y"], "observed", "#000000")
            for r in series_fits:
                plot.line(r.extra["test_x"], r.extra["mean"], f"GP {r.extra['kernel_id']}")
            path = out / f"{ds_id}_gp.svg"
            atomic_write_text(path, plot.render())
            written.append(path)
            continue
        base = run / "data" / ds_id
        test_csv, schema = base / "test.csv", base / "schema.yaml"
        if not (test_csv.exists() and schema.exists()):
            continue
        test = read_dataset(test_csv, schema)
        ids_path = base / "test_ids.json"
        test_ids = json.loads(ids_path.read_text()) if ids_path.exists() else test.row_ids()
        if len(test.schema) != 1 or test.is_classification:
            continue
        plot = SvgPlot(f"{ds_id}: predictions", test.feature_names[0], test.target_schema.name)
        train_csv = base / "train_llm.csv"
        if train_csv.exists():
            train = read_dataset(train_csv, schema)
            plot.points(train.matrix()[:, 0], train.targets(), "in-context data", "#7f7f7f")
        order = np.argsort(test.matrix()[:, 0])
        xs = test.matrix()[order, 0]
        plot.line(xs, test.targets()[order], "ground truth", "#000000")
        for r in sorted(mine, key=lambda r: r.label):
            if r.test_row_ids != test_ids:
                continue
            preds = np.array([np.nan if p is None else p for p in r.predictions], dtype=float)
            plot.line(xs, preds[order], r.label)
        path = out / f"{ds_id}_predictions.svg"
        atomic_write_text(path, plot.render())
        written.append(path)
    return written


if __name__ == "__main__":  # pragma: no cover
    main()
