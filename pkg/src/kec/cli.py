"""Command-line entry points for the clustering pipeline."""

import json
import shutil
import sys

import click

from .errors import KecError
from .pipeline import (
    CONCAT_FILE,
    KAPPA_FILE,
    PipelineConfig,
    PipelineRun,
    STAGES,
)


def _load_config(config_path, seed, domain_hint, no_desc, no_name, no_uni,
                 no_bi, mock_llm):
    config = PipelineConfig.from_file(config_path)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if domain_hint is not None:
        overrides["domain_hint"] = domain_hint
    if no_desc:
        overrides["use_description"] = False
    if no_name:
        overrides["use_concept_name"] = False
    if no_uni:
        overrides["use_uni_attr"] = False
    if no_bi:
        overrides["use_bi_attr"] = False
    if mock_llm:
        overrides["mock_llm"] = True
    if overrides:
        data = config.to_dict()
        data.update(overrides)
        config = PipelineConfig.from_dict(data)
    return config


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False))(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--domain-hint", default=None)(fn)
    fn = click.option("--no-desc", is_flag=True, default=False)(fn)
    fn = click.option("--no-name", is_flag=True, default=False)(fn)
    fn = click.option("--no-uni", is_flag=True, default=False)(fn)
    fn = click.option("--no-bi", is_flag=True, default=False)(fn)
    fn = click.option("--mock-llm", is_flag=True, default=False)(fn)
    return fn


@click.group()
def main():
    """Knowledge-enhanced clustering over precomputed embeddings."""


def _make_stage_command(stage):
    @main.command(name=stage)
    @_common_options
    def _cmd(config_path, seed, domain_hint, no_desc, no_name, no_uni,
             no_bi, mock_llm):
        config = _load_config(config_path, seed, domain_hint, no_desc,
                              no_name, no_uni, no_bi, mock_llm)
        run = PipelineRun(config)
        try:
            run.run_stage(stage)
        except KecError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    _cmd.__name__ = f"cmd_{stage}"
    return _cmd


for _stage in STAGES:
    if _stage != "eval":
        _make_stage_command(_stage)


@main.command(name="eval")
@_common_options
@click.option("--precise", is_flag=True, default=False,
              help="print the eval record with full float precision")
def eval_cmd(config_path, seed, domain_hint, no_desc, no_name, no_uni,
             no_bi, mock_llm, precise):
    """Score the predicted labeling and print one JSON record."""
    config = _load_config(config_path, seed, domain_hint, no_desc, no_name,
                          no_uni, no_bi, mock_llm)
    run = PipelineRun(config)
    try:
        report = run.run_stage("eval")
    except KecError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(json.dumps(report.as_dict(precise=precise)))


@main.command(name="run")
@_common_options
@click.option("--precise", is_flag=True, default=False,
              help="print the eval record with full float precision")
def run_all(config_path, seed, domain_hint, no_desc, no_name, no_uni, no_bi,
            mock_llm, precise):
    """Execute every stage in order and print the eval record."""
    config = _load_config(config_path, seed, domain_hint, no_desc, no_name,
                          no_uni, no_bi, mock_llm)
    run = PipelineRun(config)
    try:
        report, _manifest = run.run_all()
    except KecError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    if report is not None:
        click.echo(json.dumps(report.as_dict(precise=precise)))
    else:
        click.echo("run complete (no labels provided, eval skipped)")


@main.command(name="export-features")
@_common_options
@click.option("--dest", required=True,
              type=click.Path(file_okay=False))
def export_features(config_path, seed, domain_hint, no_desc, no_name, no_uni,
                    no_bi, mock_llm, dest):
    """Copy the grounded feature files (kappa, concat) to a directory."""
    import os

    config = _load_config(config_path, seed, domain_hint, no_desc, no_name,
                          no_uni, no_bi, mock_llm)
    run = PipelineRun(config)
    os.makedirs(dest, exist_ok=True)
    copied = []
    for name in (KAPPA_FILE, CONCAT_FILE):
        src = run.path(name)
        if not os.path.exists(src):
            click.echo(
                f"error: [export-features] missing {name}; "
                "run stage 'ground' first",
                err=True,
            )
            sys.exit(1)
        shutil.copyfile(src, os.path.join(dest, name))
        copied.append(name)
    click.echo(f"exported {', '.join(copied)} to {dest}")


if __name__ == "__main__":
    main()
