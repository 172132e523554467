"""Command line interface: ``conceptedit``

Output files are written below the configured output directory::

    plans/<image_id>.json        closest target and minimal edit set
    traces/<strategy>.jsonl      one run trace per line
    reports/<strategy>.txt       aligned report table
    reports/<strategy>.json      machine-readable report rows
    importance/<L>__<L*>.tsv     importance table

Exit status: 0 on success, 1 if the command failed (for ``run``: if every
run failed), 2 for an invalid invocation or configuration.
"""
import contextlib
import json
import logging
import os

import click

from .editplan import closest_target
from .exceptions import (
    ConceptEditError, ConfigError, UnknownImage, WrongClass)
from .metrics import build_report, format_report, load_embeddings
from .ordering import ImportanceTable, OrderingStrategy, compute_importance
from .pipeline import read_traces, run_batch, write_traces
from .config import ProjectConfig

__all__ = ['main']

logger = logging.getLogger(__name__)


@contextlib.contextmanager
def _errors():
    """Translate package exceptions into click errors"""
    try:
        yield
    except ConfigError as exc_info:
        raise click.UsageError(str(exc_info))
    except (ConceptEditError, OSError) as exc_info:
        raise click.ClickException(str(exc_info))


def _load_config(config_file, check_files=True, **overrides):
    config = ProjectConfig.load(config_file).with_overrides(**overrides)
    config.validate(check_files=check_files)
    return config


def _output_path(config, *parts):
    path = os.path.join(config.output_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _table_path(config):
    return _output_path(
        config, 'importance', '%s__%s.tsv' % tuple(config.class_pair))


@click.group()
@click.option('--verbose', is_flag=True, help="Show progress messages.")
@click.option('--debug', is_flag=True, help="Show debug messages.")
@click.version_option()
def main(verbose, debug):
    """Counterfactual concept edits for black-box image classifiers"""
    level = logging.WARNING
    if verbose:
        level = logging.INFO
    if debug:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format='%(levelname)s %(name)s: %(message)s')


@main.command()
@click.argument('config_file', type=click.Path(exists=True, dir_okay=False))
def validate(config_file):
    """Check a project configuration, its taxonomy and its corpus."""
    with _errors():
        config = _load_config(config_file)
        taxonomy = config.load_taxonomy()
        corpus, sources, targets = config.load_corpora(taxonomy)
        if not sources or not targets:
            raise ConfigError(
                "The corpus needs images labeled %s and %s"
                % tuple(config.class_pair))
    click.echo(
        "OK: taxonomy with %d concepts, %d images (%d %s, %d %s)" % (
            len(taxonomy.nodes), len(corpus), len(sources),
            config.source_label, len(targets), config.target_label))


@main.command()
@click.argument('config_file', type=click.Path(exists=True, dir_okay=False))
@click.argument('image_id')
@click.option('--output-dir', type=click.Path(file_okay=False),
              help="Override the configured output directory.")
def explain(config_file, image_id, output_dir):
    """Print the minimal edit set of IMAGE_ID towards the target class."""
    with _errors():
        config = _load_config(config_file, output_dir=output_dir)
        taxonomy = config.load_taxonomy()
        corpus, _, targets = config.load_corpora(taxonomy)
        by_id = {a.image_id: a for a in corpus}
        if image_id not in by_id:
            raise UnknownImage("No image %r in the corpus" % image_id)
        src = by_id[image_id]
        if src.label != config.source_label:
            raise WrongClass(
                "%s is labeled %s, not %s"
                % (image_id, src.label, config.source_label))
        target, edit_set = closest_target(
            taxonomy, config.cost_policy(), src, targets,
            candidate_limit=config.candidate_limit)
        with open(_output_path(config, 'plans', image_id + '.json'), 'w',
                  encoding='utf-8') as out_fh:
            json.dump({
                'source': src.to_dict(), 'target': target.to_dict(),
                'edit_set': edit_set.to_dict()}, out_fh, sort_keys=True,
                indent=2)
            out_fh.write("\n")
    click.echo("Source: %s (%s) [%s]" % (
        src.image_id, src.label, ", ".join(src.concepts)))
    click.echo("Closest target: %s (%s) [%s]" % (
        target.image_id, target.label, ", ".join(target.concepts)))
    for edit in edit_set:
        click.echo("  %-40s cost %s" % (edit.describe(), edit.cost))
    click.echo("Total cost: %s (%d edits)" % (
        edit_set.total_cost, len(edit_set)))


def _importance_table(config, taxonomy, sources, targets):
    if config.importance_table is not None:
        with open(config.importance_table, encoding='utf-8') as in_fh:
            return ImportanceTable.read(in_fh)
    table = compute_importance(
        taxonomy, config.cost_policy(), sources, targets, jobs=config.jobs,
        candidate_limit=config.candidate_limit,
        n_bootstrap=config.n_bootstrap, seed=config.seed)
    with open(_table_path(config), 'w', encoding='utf-8') as out_fh:
        table.write(out_fh)
    return table


@main.command()
@click.argument('config_file', type=click.Path(exists=True, dir_okay=False))
@click.option('--strategy',
              type=click.Choice([s.value for s in OrderingStrategy]),
              help="Override the configured ordering strategy.")
@click.option('--seed', type=int, help="Override the root seed.")
@click.option('--jobs', type=click.IntRange(min=1),
              help="Number of concurrent runs.")
@click.option('--consistency-runs', type=int,
              help="Number of classifications per image (odd).")
@click.option('--max-steps', type=click.IntRange(min=1),
              help="Maximum number of edits per run.")
@click.option('--output-dir', type=click.Path(file_okay=False),
              help="Override the configured output directory.")
def run(config_file, strategy, seed, jobs, consistency_runs, max_steps,
        output_dir):
    """Generate counterfactuals for every image of the source class."""
    with _errors():
        config = _load_config(
            config_file, strategy=strategy, seed=seed, jobs=jobs,
            consistency_runs=consistency_runs, max_steps=max_steps,
            output_dir=output_dir)
        taxonomy = config.load_taxonomy()
        _, sources, targets = config.load_corpora(taxonomy)
        run_config = config.run_config()
        table = None
        if run_config.strategy is not OrderingStrategy.LOCAL:
            table = _importance_table(config, taxonomy, sources, targets)
        traces = run_batch(
            taxonomy, config.cost_policy(), sources, targets,
            config.make_contracts, run_config, table=table, jobs=config.jobs)
        name = run_config.strategy.value
        with open(_output_path(config, 'traces', name + '.jsonl'), 'w',
                  encoding='utf-8') as out_fh:
            write_traces(traces, out_fh)
        failed = sum(1 for t in traces if t.status == 'failed')
        if traces and failed == len(traces):
            raise click.ClickException("All %d runs failed" % failed)
        rows = build_report(traces, classifier_tag=config.backend)
        report = format_report(rows)
        with open(_output_path(config, 'reports', name + '.txt'), 'w',
                  encoding='utf-8') as out_fh:
            out_fh.write(report + "\n")
        with open(_output_path(config, 'reports', name + '.json'), 'w',
                  encoding='utf-8') as out_fh:
            json.dump([row.to_dict() for row in rows], out_fh,
                      sort_keys=True, indent=2)
            out_fh.write("\n")
    if failed:
        click.echo("%d of %d runs failed" % (failed, len(traces)), err=True)
    click.echo(report)


@main.command()
@click.argument('config_file', type=click.Path(exists=True, dir_okay=False))
@click.option('--top', type=click.IntRange(min=1), default=10,
              show_default=True, help="Number of pairs to print.")
@click.option('--bootstrap', type=click.IntRange(min=0),
              help="Number of bootstrap resamples for the std column.")
@click.option('--jobs', type=click.IntRange(min=1),
              help="Number of worker threads.")
@click.option('--output-dir', type=click.Path(file_okay=False),
              help="Override the configured output directory.")
def importance(config_file, top, bootstrap, jobs, output_dir):
    """Compute the importance table of the configured class pair."""
    with _errors():
        config = _load_config(
            config_file, n_bootstrap=bootstrap, jobs=jobs,
            output_dir=output_dir)
        taxonomy = config.load_taxonomy()
        _, sources, targets = config.load_corpora(taxonomy)
        table = compute_importance(
            taxonomy, config.cost_policy(), sources, targets,
            jobs=config.jobs, candidate_limit=config.candidate_limit,
            n_bootstrap=config.n_bootstrap, seed=config.seed)
        with open(_table_path(config), 'w', encoding='utf-8') as out_fh:
            table.write(out_fh)
    click.echo(table.format(top=top))


@main.command()
@click.argument('traces_file', type=click.Path(exists=True, dir_okay=False))
@click.option('--sources', 'sources_file',
              type=click.Path(exists=True, dir_okay=False),
              help="Embeddings of the source images.")
@click.option('--counterfactuals', 'counterfactuals_file',
              type=click.Path(exists=True, dir_okay=False),
              help="Embeddings of the counterfactual images (same order).")
@click.option('--classifier-tag', default='', help="Name for the report.")
@click.option('--json', 'json_file', type=click.Path(dir_okay=False),
              help="Also write the report rows as JSON.")
@click.option('--plot', 'plot_file', type=click.Path(dir_okay=False),
              help="Write the ambiguity plot to this file.")
def metrics(traces_file, sources_file, counterfactuals_file, classifier_tag,
            json_file, plot_file):
    """Evaluate the traces in TRACES_FILE."""
    if (sources_file is None) != (counterfactuals_file is None):
        raise click.UsageError(
            "--sources and --counterfactuals must be given together")
    with _errors():
        traces = read_traces(traces_file)
        embeddings = None
        if sources_file is not None:
            embeddings = (
                load_embeddings(sources_file),
                load_embeddings(counterfactuals_file))
        rows = build_report(
            traces, classifier_tag=classifier_tag, embeddings=embeddings)
        if json_file is not None:
            with open(json_file, 'w', encoding='utf-8') as out_fh:
                json.dump([row.to_dict() for row in rows], out_fh,
                          sort_keys=True, indent=2)
                out_fh.write("\n")
        if plot_file is not None:
            from .visualize import plot_ambiguity
            plot_ambiguity(traces, filename=plot_file)
    click.echo(format_report(rows))
