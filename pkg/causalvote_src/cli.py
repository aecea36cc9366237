"""Command line interface for causal-vote."""

import os
import sys
import logging
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import click
import colorlog
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import __version__
from .citest import sample_network, sample_selection_bias
from .config import LOG_FORMATS, Config
from .evaluate import report as evaluation_report, simulate_majority_accuracy, simulation_table
from .graph import export_graph
from .ground_truth import GroundTruthNotFound, available_ground_truths, load_ground_truth
from .llm import llm_api_key
from .recover import STATUS_COMPLETE, STATUS_PARTIAL, RecoveryReport, run_pipeline
from .retrieval import build_corpus
from .utils import unordered_pairs, write_json

console = Console()

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_FAILED = 2

NETWORKS_DIR = Path(__file__).parent / "data" / "networks"
KB_CHOICES = {"bg": "use_background", "doc": "use_documents", "pc": "use_pc"}


def setup_logging(log_level: str, log_file: Optional[str] = None, log_format: str = "rich") -> None:
    """Setup logging configuration."""
    level = getattr(logging, log_level.upper(), logging.INFO)

    file_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    if log_format == "color":
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(colorlog.ColoredFormatter(
            '%(log_color)s%(levelname)-8s%(reset)s %(name)s: %(message)s'
        ))
    elif log_format == "plain":
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter('%(levelname)s %(name)s: %(message)s'))
    else:
        console_handler = RichHandler(console=console, show_time=False, show_path=False)
        console_handler.setFormatter(logging.Formatter('%(message)s'))
    root_logger.addHandler(console_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(file_formatter)
        root_logger.addHandler(file_handler)


def load_config(config_file: Optional[str], overrides: Dict[str, Any]) -> Config:
    """Merged and validated configuration; exits with status 2 on errors."""
    try:
        config = Config.load(config_file, overrides)
        config.validate()
    except (ValueError, FileNotFoundError) as e:
        console.print(f"[red]Configuration error: {e}[/red]")
        sys.exit(EXIT_FAILED)
    setup_logging(config.log_level, config.log_file or None, config.log_format)
    if config_file:
        console.print(f"[green]Loaded configuration from: {config_file}[/green]")
    return config


def parse_kb_roster(value: Optional[str]) -> Dict[str, bool]:
    """``"bg,doc"`` -> ``{"use_background": True, "use_documents": True, "use_pc": False}``."""
    if value is None:
        return {}
    chosen = {item.strip().lower() for item in value.split(",") if item.strip()}
    unknown = chosen - set(KB_CHOICES)
    if unknown or not chosen:
        raise click.BadParameter(f"expected a comma list of {', '.join(KB_CHOICES)}, got {value!r}",
                                 param_hint="--kb")
    return {field_name: key in chosen for key, field_name in KB_CHOICES.items()}


def parse_truth_option(value: str) -> Tuple[str, str]:
    name, _, variant = value.partition(":")
    if not name:
        raise click.BadParameter(f"expected NAME[:VARIANT], got {value!r}", param_hint="--truth")
    return name, variant or "original"


def parse_voter_counts(value: str) -> List[int]:
    try:
        counts = [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise click.BadParameter(f"expected a comma list of integers, got {value!r}", param_hint="--voters")
    if not counts or any(count < 1 or count % 2 == 0 for count in counts):
        raise click.BadParameter("voter counts must be odd and positive", param_hint="--voters")
    return counts


def exit_code_for(status: str) -> int:
    if status == STATUS_COMPLETE:
        return EXIT_OK
    if status == STATUS_PARTIAL:
        return EXIT_PARTIAL
    return EXIT_FAILED


def guarded(action: str) -> Callable:
    """Wrap a command body with the interrupt and unexpected-error handling."""
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except KeyboardInterrupt:
                console.print(f"\n[yellow]{action} interrupted by user[/yellow]")
                sys.exit(EXIT_FAILED)
            except click.exceptions.Exit:
                raise
            except click.ClickException:
                raise
            except Exception as e:
                console.print(f"[red]Unexpected error: {e}[/red]")
                logging.exception("Unexpected error occurred")
                sys.exit(EXIT_FAILED)
        return wrapper
    return decorator


def logging_options(func: Callable) -> Callable:
    func = click.option('--log-format', default=None, type=click.Choice(LOG_FORMATS),
                        help='Console log style (overrides config)')(func)
    func = click.option('--log-file', default=None, help='Log file path (overrides config)')(func)
    func = click.option('--log-level', default=None,
                        type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
                        help='Logging level (overrides config)')(func)
    func = click.option('--config', '-c', 'config_file', type=click.Path(exists=True),
                        help='Configuration file path')(func)
    return func


def display_corpus_summary(manifest) -> None:
    table = Table(title="Corpus Summary")
    table.add_column("Pair", style="cyan")
    table.add_column("Documents", justify="right", style="green")
    table.add_column("Status")
    table.add_column("Flags", style="yellow")
    for key in sorted(manifest.pairs):
        entry = manifest.pairs[key]
        table.add_row(f"{entry.factor_a} / {entry.factor_b}", str(len(entry.documents)),
                      entry.status, ", ".join(entry.flags))
    console.print(table)
    console.print(f"[green]{manifest.document_count} documents over {len(manifest.pairs)} pairs[/green]")


def display_recovery_summary(result: RecoveryReport) -> None:
    table = Table(title=f"{result.dataset} Recovery Summary")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Variables", str(len(result.variables)))
    table.add_row("Skeleton Edges", str(len(result.skeleton.edges)))
    table.add_row("Oriented Edges", str(len(result.graph.edges)))
    table.add_row("Unresolved Orientations", str(len(result.unresolved)))
    table.add_row("Demoted (cycles)", str(len(result.demoted)))
    table.add_row("Flagged Pairs", str(len(result.ledger.flagged())))
    table.add_row("Status", result.status)
    console.print(table)

    flagged = result.ledger.flagged()
    if flagged:
        console.print("[yellow]Flagged pairs:[/yellow]")
        for (a, b), flags in sorted(flagged.items()):
            console.print(f"  - {result.variables[a]} / {result.variables[b]}: {', '.join(flags)}")


@click.group()
@click.version_option(version=__version__, prog_name='causalvote')
def cli():
    """causal-vote - recover causal graphs by voting over knowledge bases."""
    pass


@cli.command('fetch-docs')
@click.argument('dataset')
@click.option('--titles', 'max_titles', default=None, type=int, help='Titles searched per pair (overrides config)')
@click.option('--docs', 'max_documents', default=None, type=int, help='Documents kept per pair (overrides config)')
@click.option('--offline', is_flag=True, help='Use fixture clients instead of the network')
@click.option('--fixtures', 'fixtures_dir', default=None, type=click.Path(), help='Fixture directory for --offline')
@click.option('--out', 'corpus_dir', default=None, type=click.Path(), help='Corpus directory (overrides config)')
@click.option('--variant', 'truth_variant', default=None, help='Ground-truth variant supplying the variables')
@click.option('--jobs', '-j', 'max_workers', default=None, type=int, help='Concurrent pairs (overrides config)')
@logging_options
@guarded("Corpus build")
def fetch_docs(dataset: str, config_file: Optional[str], **options) -> None:
    """Search and fetch the document corpus for every pair of DATASET."""
    options["offline"] = options["offline"] or None
    config = load_config(config_file, dict(options, dataset=dataset))
    try:
        truth = load_ground_truth(config.dataset, config.truth_variant)
    except GroundTruthNotFound as e:
        console.print(f"[red]{e}[/red]")
        sys.exit(EXIT_FAILED)

    if not config.offline and not os.environ.get("SERPAPI_API_KEY"):
        console.print("[red]SERPAPI_API_KEY is not set; export it or pass --offline --fixtures DIR[/red]")
        sys.exit(EXIT_FAILED)

    pairs = unordered_pairs(list(truth.factors))
    console.print(f"[blue]Building corpus for {len(pairs)} pairs of {truth.name} into {config.corpus_dir}[/blue]")
    manifest = build_corpus(pairs, config)
    display_corpus_summary(manifest)

    partial = [entry for entry in manifest.pairs.values() if entry.status != STATUS_COMPLETE]
    sys.exit(EXIT_PARTIAL if partial else EXIT_OK)


@cli.command('recover')
@click.argument('dataset')
@click.option('--kb', 'kb_roster', default=None, help='Knowledge bases to vote with, e.g. bg,doc,pc')
@click.option('--mock', default=None, help="'oracle' or a scripted-response JSON file instead of the LLM service")
@click.option('--out', 'output_dir', default=None, type=click.Path(), help='Run directory (overrides config)')
@click.option('--corpus', 'corpus_dir', default=None, type=click.Path(), help='Corpus directory (overrides config)')
@click.option('--data', 'dataset_path', default=None, type=click.Path(exists=True),
              help='Categorical CSV for the PC vote')
@click.option('--variant', 'truth_variant', default=None, help='Ground-truth variant supplying the variables')
@click.option('--model', default=None, help='Chat model name (overrides config)')
@click.option('--jobs', '-j', 'max_workers', default=None, type=int, help='Concurrent chains (overrides config)')
@click.option('--offline', is_flag=True, help='Never touch the network')
@click.option('--skeleton-only', is_flag=True, help='Stop after edge voting')
@logging_options
@guarded("Recovery")
def recover(dataset: str, kb_roster: Optional[str], mock: Optional[str], skeleton_only: bool,
            config_file: Optional[str], **options) -> None:
    """Recover the causal graph over the variables of DATASET."""
    options["offline"] = options["offline"] or None
    overrides = dict(options, dataset=dataset)
    overrides.update(parse_kb_roster(kb_roster))
    if mock == "oracle":
        overrides["llm_client"] = "oracle"
    elif mock:
        if not Path(mock).exists():
            raise click.BadParameter(f"no such file: {mock}", param_hint="--mock")
        overrides.update(llm_client="scripted", mock_script=mock)
    config = load_config(config_file, overrides)

    uses_llm = config.use_background or config.use_documents
    if uses_llm and config.llm_client == "http":
        if config.offline:
            console.print("[red]--offline needs --mock oracle or a scripted response file[/red]")
            sys.exit(EXIT_FAILED)
        if not llm_api_key():
            console.print("[red]CAUSALVOTE_LLM_API_KEY is not set; export it or pass --mock[/red]")
            sys.exit(EXIT_FAILED)

    try:
        result = run_pipeline(config, progress=True, skeleton_only=skeleton_only)
    except (ValueError, GroundTruthNotFound) as e:
        console.print(f"[red]{e}[/red]")
        sys.exit(EXIT_FAILED)

    console.print()
    display_recovery_summary(result)
    console.print(f"[green]Run written to: {config.output_dir}[/green]")
    sys.exit(exit_code_for(result.status))


@cli.command('eval')
@click.argument('run_dir', type=click.Path(file_okay=False))
@click.option('--truth', 'truths', multiple=True, help='Ground truth NAME[:VARIANT]; repeatable')
@logging_options
@guarded("Evaluation")
def evaluate_run(run_dir: str, truths: Sequence[str], config_file: Optional[str], **options) -> None:
    """Score the run in RUN_DIR against one or more ground truths."""
    load_config(config_file, options)
    if not (Path(run_dir) / "report.json").exists():
        console.print(f"[red]No report.json in {run_dir}[/red]")
        sys.exit(EXIT_FAILED)
    recovery = RecoveryReport.load(run_dir)

    if truths:
        requested = [parse_truth_option(value) for value in truths]
    else:
        requested = [(name, variant) for name, variant in available_ground_truths()
                     if name.upper() == recovery.dataset.upper()]
    try:
        entries = [load_ground_truth(name, variant) for name, variant in requested]
        result = evaluation_report(recovery, entries)
    except (ValueError, GroundTruthNotFound) as e:
        console.print(f"[red]{e}[/red]")
        sys.exit(EXIT_FAILED)

    write_json(Path(run_dir) / "eval.json", result.to_dict())
    console.print(result.to_table())


@cli.command('simulate')
@click.option('--p', 'voter_accuracy', default=0.7, show_default=True, type=float,
              help='Accuracy of each independent voter')
@click.option('--voters', default="1,3,5,7,9", show_default=True, help='Comma list of odd voter counts')
@click.option('--trials', default=500, show_default=True, type=int, help='Trials per voter count')
@click.option('--seed', default=0, show_default=True, type=int, help='Random seed')
@click.option('--dataset', default="ASIA", show_default=True, help='Ground truth whose skeleton is voted on')
@click.option('--variant', default="original", show_default=True, help='Ground-truth variant')
@click.option('--tolerance', default=0.01, show_default=True, type=float,
              help='Allowed drop in mean F1 between consecutive voter counts')
@guarded("Simulation")
def simulate(voter_accuracy: float, voters: str, trials: int, seed: int, dataset: str, variant: str,
             tolerance: float) -> None:
    """Majority-vote accuracy as the number of independent voters grows."""
    if not 0.5 < voter_accuracy <= 1:
        raise click.BadParameter(f"must lie in (0.5, 1], got {voter_accuracy}", param_hint="--p")
    if trials < 1:
        raise click.BadParameter("must be at least 1", param_hint="--trials")
    counts = sorted(parse_voter_counts(voters))
    try:
        truth = load_ground_truth(dataset, variant)
    except GroundTruthNotFound as e:
        console.print(f"[red]{e}[/red]")
        sys.exit(EXIT_FAILED)

    rows = simulate_majority_accuracy(truth.skeleton, voter_accuracy, counts, trials, seed)
    console.print(simulation_table(rows, voter_accuracy))

    drops = [(a.voters, b.voters) for a, b in zip(rows, rows[1:]) if b.mean_f1 < a.mean_f1 - tolerance]
    if drops:
        for low, high in drops:
            console.print(f"[red]Mean F1 fell from {low} to {high} voters beyond {tolerance}[/red]")
        sys.exit(EXIT_PARTIAL)


@cli.command('sample-data')
@click.argument('output', type=click.Path(dir_okay=False))
@click.option('--network', default="asia", show_default=True,
              help='Bundled network name or path to a CPT JSON file')
@click.option('--rows', default=10000, show_default=True, type=int, help='Rows to sample')
@click.option('--seed', default=0, show_default=True, type=int, help='Random seed')
@click.option('--selection-bias', is_flag=True, help='Sample the age/gender/disease population instead')
@click.option('--under-60-only', is_flag=True, help='With --selection-bias, keep only people under 60')
@guarded("Sampling")
def sample_data(output: str, network: str, rows: int, seed: int, selection_bias: bool,
                under_60_only: bool) -> None:
    """Write a sampled categorical dataset to OUTPUT (CSV plus JSON sidecar)."""
    if rows < 1:
        raise click.BadParameter("must be at least 1", param_hint="--rows")
    if selection_bias:
        dataset = sample_selection_bias(rows, seed=seed, under_60_only=under_60_only)
    else:
        bundled = NETWORKS_DIR / f"{network.lower()}.json"
        source = bundled if bundled.exists() else Path(network)
        if not source.exists():
            raise click.BadParameter(f"no bundled network or file named {network!r}", param_hint="--network")
        dataset = sample_network(source, rows, seed=seed)
    Path(output).parent.mkdir(parents=True, exist_ok=True)
    dataset.to_csv(output)
    console.print(f"[green]Wrote {dataset.n_rows} rows over {len(dataset.names)} variables to {output}[/green]")


@cli.command('export')
@click.argument('run_dir', type=click.Path(exists=True, file_okay=False))
@click.option('--format', 'fmt', default="dot", show_default=True, type=click.Choice(["dot", "json"]))
@click.option('--skeleton', 'which', flag_value="skeleton", help='Export the voted skeleton')
@click.option('--oriented', 'which', flag_value="oriented", default=True, help='Export the oriented graph')
@guarded("Export")
def export(run_dir: str, fmt: str, which: str) -> None:
    """Print the recovered graph of RUN_DIR as DOT or JSON."""
    if not (Path(run_dir) / "report.json").exists():
        console.print(f"[red]No report.json in {run_dir}[/red]")
        sys.exit(EXIT_FAILED)
    recovery = RecoveryReport.load(run_dir)
    graph = recovery.skeleton if which == "skeleton" else recovery.graph
    click.echo(export_graph(graph, fmt), nl=False)


@cli.command('init')
@click.argument('config_file', required=False)
def init_config(config_file: Optional[str] = None) -> None:
    """Initialize a new configuration file."""
    if config_file is None:
        config_file = "config.yaml"

    if Path(config_file).exists():
        if not click.confirm(f"Configuration file {config_file} already exists. Overwrite?"):
            console.print("[yellow]Configuration creation cancelled[/yellow]")
            return

    try:
        config = Config()
        config.save_to_file(config_file)
        console.print(f"[green]Configuration file created: {config_file}[/green]")
        console.print("Edit this file to choose the dataset, knowledge bases and model.")
    except Exception as e:
        console.print(f"[red]Error creating configuration file: {e}[/red]")
        sys.exit(EXIT_FAILED)


def main() -> None:
    cli()


if __name__ == '__main__':
    main()
