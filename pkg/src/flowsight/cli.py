"""Command-line entry points: ingest, rollup, shell, query, serve, bench,
gen-corpus.  The store root comes from --store, the config file, or the
FLOWSIGHT_STORE environment variable, in that order."""

from __future__ import annotations

import os
import sys

import click

from .corpus import CorpusSpec, write_corpus
from .flowagg import AggConfig, Granularity
from .flowdb import CacheConfig, FlowDB
from .flowql import execute, explain, parse
from .flowql.parser import QLError
from .hierarchy import FeatureSet
from .pipeline import build_rollups, ingest_files
from .shell import Shell, caret_message, format_rows

STORE_ENV = "FLOWSIGHT_STORE"


def read_config(path: str) -> dict:
    """Line-oriented key=value config, # starts a comment."""
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise click.ClickException(f"bad config line: {raw.strip()!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


class Context:
    def __init__(self, store, config_path, cache_trees, workers):
        self.config = read_config(config_path) if config_path else {}
        self.store_root = (
            store
            or self.config.get("store")
            or os.environ.get(STORE_ENV)
            or "./store"
        )
        self.cache_trees = int(
            cache_trees or self.config.get("cache_trees") or 4096
        )
        self.workers = int(workers or self.config.get("workers") or 1)
        self._db = None

    @property
    def db(self) -> FlowDB:
        if self._db is None:
            self._db = FlowDB(
                os.path.abspath(self.store_root),
                cache=CacheConfig(max_cached_trees=self.cache_trees),
            )
        return self._db


@click.group()
@click.option("--store", default=None, help="store root directory")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="key=value config file")
@click.option("--cache-trees", default=None, type=int, help="LRU cache size")
@click.option("--workers", default=None, type=int, help="worker pool size")
@click.pass_context
def main(ctx, store, config_path, cache_trees, workers):
    """Flow analytics on compact hierarchical summaries."""
    ctx.obj = Context(store, config_path, cache_trees, workers)


def _feature_sets(option: str | None) -> tuple[FeatureSet, ...]:
    if not option:
        return tuple(FeatureSet)
    return tuple(FeatureSet.from_name(n.strip()) for n in option.split(","))


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--kind", type=click.Choice(["flow", "packet"]), default="flow")
@click.option("--feature-sets", default=None, help="comma-separated subset (default all 11)")
@click.option("--base-granularity", default="15m")
@click.option("--probability", default=0.3, type=float, help="interior-node insert probability")
@click.option("--seed", default=0, type=int)
@click.option("--dedup", is_flag=True, help="skip files already ingested (by digest)")
@click.pass_obj
def ingest(obj, paths, kind, feature_sets, base_granularity, probability, seed, dedup):
    """Parse flow inputs and store per-bin summary trees."""
    cfg = AggConfig(
        base_granularity=Granularity.from_label(base_granularity),
        feature_sets=_feature_sets(feature_sets),
        insert_probability=probability,
        seed=seed,
    )
    try:
        result = ingest_files(obj.db, list(paths), cfg, kind=kind, dedup=dedup)
    except Exception as exc:
        raise click.ClickException(str(exc))
    for line in result.log_lines():
        click.echo(line)


@main.command()
@click.option("--granularities", default="1h,1d", help="comma-separated targets")
@click.pass_obj
def rollup(obj, granularities):
    """Materialize missing coarser and all-sites trees (idempotent)."""
    targets = [Granularity.from_label(g.strip()) for g in granularities.split(",")]
    result = build_rollups(obj.db, targets)
    click.echo(f"trees_written={result.trees_written}")
    click.echo(f"trees_skipped={result.trees_skipped}")
    click.echo(f"wall_seconds={result.seconds:.3f}")


@main.command()
@click.option("-q", "--query", "query_text", required=True)
@click.option("--format", "fmt", type=click.Choice(["table", "csv", "json-lines"]),
              default="table")
@click.option("--explain", "do_explain", is_flag=True, help="print the plan instead")
@click.option("--timeout", default=60.0, type=float)
@click.pass_obj
def query(obj, query_text, fmt, do_explain, timeout):
    """Run one query and print the result."""
    try:
        plan = parse(query_text)
        if do_explain:
            click.echo(explain(obj.db, plan))
            return
        table = execute(obj.db, plan, timeout=timeout, workers=obj.workers)
    except QLError as exc:
        click.echo(caret_message(query_text, exc), err=True)
        sys.exit(1)
    click.echo(format_rows(table, fmt))
    for warning in table.warnings:
        click.echo(f"-- warning: {warning}", err=True)


@main.command()
@click.pass_obj
def shell(obj):
    """Interactive query shell."""
    Shell(obj.db, workers=obj.workers).run()


@main.command()
@click.option("--listen", default=None, help="host:port (default 127.0.0.1:8080)")
@click.option("--ui", "ui_dir", default=None, type=click.Path(), help="static UI directory")
@click.pass_obj
def serve(obj, listen, ui_dir):
    """Serve the HTTP API."""
    from .server import ServerConfig, serve as run_server

    config = ServerConfig(
        store_root=obj.store_root,
        listen=listen or obj.config.get("listen") or "127.0.0.1:8080",
        cache_trees=obj.cache_trees,
        workers=max(obj.workers, 1),
        ui_dir=ui_dir,
    )
    click.echo(f"serving {config.store_root} on http://{config.listen}")
    run_server(config)


@main.command()
@click.option("--reps", default=3, type=int)
@click.option("--levels", default="1d,1h,15m")
@click.option("--out", "outdir", default="bench-out", type=click.Path())
@click.option("--day", default=None, type=int, help="day start epoch (default: inferred)")
@click.pass_obj
def bench(obj, reps, levels, outdir, day):
    """Run the benchmark suite; write CSV, render figures."""
    from .bench import build_suite, run_suite, summarize, write_csv
    from .figures import save_bench_figure, save_store_figures

    db = obj.db
    if day is None:
        starts = [k.start_ts for k in db.keys()]
        if not starts:
            raise click.ClickException("store is empty; ingest a corpus first")
        day = (min(starts) // 86400) * 86400
    suite = build_suite(db, day)
    level_list = [Granularity.from_label(g.strip()) for g in levels.split(",")]
    rows = run_suite(db, suite, repetitions=reps, levels=level_list, workers=obj.workers)
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "bench.csv")
    write_csv(rows, csv_path)
    fig_path = save_bench_figure(rows, os.path.join(outdir, "bench_latency.png"))
    extra = save_store_figures(db, outdir)
    for (num, gran, mode), stats in summarize(rows).items():
        click.echo(
            f"benchmark={num} name={stats['name']} granularity={gran} mode={mode} "
            f"min_ms={stats['min']:.1f} median_ms={stats['median']:.1f} "
            f"max_ms={stats['max']:.1f}"
        )
    click.echo(f"wrote {csv_path}, {fig_path}" + (f", {', '.join(extra)}" if extra else ""))


@main.command("gen-corpus")
@click.argument("csv_path", type=click.Path())
@click.option("--sites", default=50, type=int)
@click.option("--flows-per-bin", default=150, type=int)
@click.option("--seed", default=1234, type=int)
@click.option("--day", default=None, type=int, help="day start epoch (UTC midnight)")
@click.option("--truth", "truth_path", default=None, type=click.Path())
@click.option("--gzip", "compress", is_flag=True)
def gen_corpus(csv_path, sites, flows_per_bin, seed, day, truth_path, compress):
    """Write a synthetic day of flows with planted anomalies."""
    spec = CorpusSpec(sites=sites, flows_per_bin=flows_per_bin, seed=seed)
    if day is not None:
        if day % 86400 != 0:
            raise click.ClickException("day must be a UTC midnight epoch")
        spec.day_start = day
    truth = write_corpus(spec, csv_path, truth_path, compress=compress)
    click.echo(f"records={truth['records']}")
    click.echo(f"attack_window={truth['attack']['window']}")
    click.echo(f"wrote {csv_path}" + (f" and {truth_path}" if truth_path else ""))


if __name__ == "__main__":
    main()
