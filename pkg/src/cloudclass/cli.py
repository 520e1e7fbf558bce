import sys
from dataclasses import asdict
from pathlib import Path
from typing import NoReturn

import click
import pandas as pd
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from cloudclass.classifier import EventKind, XClassModel
from cloudclass.config import merge_config, settings
from cloudclass.datasets import Dataset, gen_synth, ingest_csv, write_csv
from cloudclass.errors import CloudClassError
from cloudclass.experiment import (
    StreamSchedule,
    default_schedule,
    learning_curve,
    run_experiment,
    write_learning_curve,
    write_report,
)
from cloudclass.persistence import load_model, save_model
from cloudclass.rules import export_rules, render_rules_text
from cloudclass.utils import configure_logging

console = Console(record=True)

HELP = {"help_option_names": ["-h", "--help"]}


class DefaultGroup(click.Group):
    """
    A Click Group that invokes a default command if a subcommand is not found.
    """

    def __init__(self, *args, **kwargs):
        self.default_command = kwargs.pop("default_command", None)
        super().__init__(*args, **kwargs)

    def resolve_command(self, ctx, args):
        try:
            return super().resolve_command(ctx, args)
        except click.UsageError:
            if self.default_command:
                return (
                    self.default_command,
                    self.get_command(ctx, self.default_command),
                    args,
                )
            else:
                raise


def fail(message: str) -> NoReturn:
    console.print(f"[bold red]Error:[/bold red] {message}")
    sys.exit(1)


def model_option(f):
    return click.option(
        "--model",
        "model_path",
        type=click.Path(dir_okay=False, path_type=Path),
        default=None,
        help="Model file (default: the config directory's model.cloud)",
    )(f)


def resolve_model_path(model_path):
    if model_path is not None:
        return model_path
    settings.ensure_config_dir()
    return settings.model_path


def open_model(ctx, model_path) -> XClassModel:
    """Loads a model; explicit global flags override its saved config."""
    model = load_model(resolve_model_path(model_path))
    overrides = ctx.obj["overrides"]
    if any(v is not None for v in overrides.values()):
        model.config = merge_config(model.config, **overrides)
        model.tracker.m = model.config.novelty.m
    return model


def fresh_config(ctx):
    return settings.classifier_config(**ctx.obj["overrides"])


@click.group(cls=DefaultGroup, default_command="predict", context_settings=HELP)
@click.option("--m-sigma", type=float, default=None, help="Sigma multiplier of the drop rule")
@click.option("--kappa", type=int, default=None, help="Buffered samples needed for a new class")
@click.option(
    "--feature-policy",
    type=click.Choice(["mean", "top-k", "off"]),
    default=None,
    help="Per-class feature selection policy",
)
@click.option("--top-k", type=int, default=None, help="Features kept by the top-k policy")
@click.option("--shared-mask", is_flag=True, help="One feature mask for every class")
@click.option("--freeze-stats", is_flag=True, help="Stop updating preprocessing statistics")
@click.option("--seed", type=int, default=None, help="Seed for all randomness")
@click.option("--log-level", default=None, help="Logging level (default: WARNING)")
@click.pass_context
def cli(ctx, m_sigma, kappa, feature_policy, top_k, shared_mask, freeze_stats, seed, log_level):
    """
    \b
    cloudclass: learn classes from a stream, discover new ones.
    ----------------------------------------------------------
    Prime a model with a few labeled samples, stream unlabeled data through it,
    and let it form new classes when confidence drops.

    \b
    Examples:
      cloudclass gen-synth blobs.csv --blobs 3 --noise 2
      cloudclass prime primer.csv --warm-stats blobs.csv
      cloudclass stream unlabeled.csv --events events.csv
      cloudclass run-experiment blobs.csv out/ --prime-class blob_0
    """
    configure_logging(log_level or settings.log_level)
    ctx.ensure_object(dict)
    ctx.obj["seed"] = settings.seed if seed is None else seed
    ctx.obj["overrides"] = {
        "m": m_sigma,
        "kappa": kappa,
        "feature_policy": feature_policy,
        "top_k": top_k,
        "shared_mask": True if shared_mask else None,
        "freeze_stats": True if freeze_stats else None,
    }


@cli.command(name="gen-synth", context_settings=HELP)
@click.argument("output", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--blobs", "-b", type=int, default=3, show_default=True, help="Number of blobs")
@click.option("--dim", "-d", type=int, default=2, show_default=True, help="Informative features")
@click.option(
    "--separation", "-s", type=float, default=8.0, show_default=True,
    help="Minimum center distance in sigma units",
)
@click.option("--noise", "-n", type=int, default=0, show_default=True, help="Pure-noise features")
@click.option("--samples", type=int, default=100, show_default=True, help="Samples per blob")
@click.pass_context
def gen_synth_cmd(ctx, output, blobs, dim, separation, noise, samples):
    """Write a seeded Gaussian-blob dataset to OUTPUT."""
    try:
        dataset, truth = gen_synth(blobs, dim, separation, noise, samples, ctx.obj["seed"])
    except CloudClassError as e:
        fail(str(e))
    write_csv(dataset, output)

    table = Table(title=f"Blob centers (seed {ctx.obj['seed']})")
    table.add_column("Blob", style="cyan", no_wrap=True)
    for name in truth.informative:
        table.add_column(name, style="green", justify="right")
    for b, center in enumerate(truth.centers):
        table.add_row(f"blob_{b}", *(f"{v:.3f}" for v in center))
    console.print(table)
    console.print(f"[green]Wrote {len(dataset)} rows to [bold]{output}[/bold][/green]")


@cli.command(context_settings=HELP)
@click.argument("data", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--warm-stats",
    "-w",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Unlabeled CSV that seeds the preprocessing statistics",
)
@model_option
@click.pass_context
def prime(ctx, data, warm_stats, model_path):
    """Build a new model from the labeled samples in DATA."""
    try:
        dataset = ingest_csv(data)
        if not dataset.labeled:
            fail(f"{data} has no 'label' column")
        pool = ingest_csv(warm_stats).rows if warm_stats else None
        model = XClassModel(config=fresh_config(ctx), schema=dataset.schema)
        model.prime(list(zip(dataset.rows, dataset.labels or [])), pool=pool)
        path = save_model(model, resolve_model_path(model_path))
    except CloudClassError as e:
        fail(str(e))
    console.print(class_table(model))
    console.print(f"[green]Saved model to [bold]{path}[/bold][/green]")


def class_table(model: XClassModel) -> Table:
    table = Table(title="Classes")
    table.add_column("Label", style="cyan", no_wrap=True)
    table.add_column("Id", justify="right")
    table.add_column("Clouds", style="green", justify="right")
    table.add_column("Samples", justify="right")
    table.add_column("Features", style="magenta")
    names = model.schema or [f"f{i}" for i in range(model.dim or 0)]
    for cls in sorted(model.classes.values(), key=lambda m: m.class_id):
        kept = [n for n, keep in zip(names, cls.feature_mask) if keep]
        table.add_row(
            cls.label, str(cls.class_id), str(cls.P), str(cls.sample_count), ", ".join(kept)
        )
    return table


@cli.command(context_settings=HELP)
@click.argument("data", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--events",
    "-e",
    "events_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Write the per-sample event log to this CSV",
)
@model_option
@click.pass_context
def stream(ctx, data, events_path, model_path):
    """Stream the rows of DATA through the model, unlabeled, and save it."""
    try:
        model = open_model(ctx, model_path)
        dataset = ingest_csv(data)
        events = [model.learn_stream(row) for row in dataset.rows]
        path = save_model(model, resolve_model_path(model_path))
    except CloudClassError as e:
        fail(str(e))

    counts = {kind: sum(e.kind == kind for e in events) for kind in EventKind}
    summary = "\n".join(f"{kind.value}: {n}" for kind, n in counts.items() if n)
    console.print(Panel(summary or "no samples", title=f"Streamed {len(events)} sample(s)"))
    for e in events:
        if e.kind == EventKind.NEW_CLASS_CREATED:
            console.print(
                f"[yellow]New class [bold]{e.label}[/bold] formed at sample {e.seq}[/yellow]"
            )
    if events_path:
        frame = pd.DataFrame([
            {**asdict(e), "kind": e.kind.value, "founders": sum(len(s) for s in e.founders.values())}
            for e in events
        ])
        frame.to_csv(events_path, index=False, lineterminator="\n")
        console.print(f"[dim]Event log written to {events_path}[/dim]")
    console.print(f"[green]Saved model to [bold]{path}[/bold][/green]")


@cli.command(context_settings=HELP)
@click.argument("data", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--output", "-o", type=click.Path(dir_okay=False, path_type=Path),
    help="Write predictions to this CSV instead of a table",
)
@model_option
@click.pass_context
def predict(ctx, data, output, model_path):
    """Predict the class of every row in DATA (the model is not changed)."""
    try:
        model = open_model(ctx, model_path)
        dataset = ingest_csv(data)
        predictions = [model.predict(row) for row in dataset.rows]
    except CloudClassError as e:
        fail(str(e))

    labels = sorted(model.classes.values(), key=lambda m: m.class_id)
    if output:
        frame = pd.DataFrame({
            "predicted": [p.label for p in predictions],
            **{f"lambda_{m.label}": [p.lambdas[m.label] for p in predictions] for m in labels},
        })
        frame.to_csv(output, index=False, lineterminator="\n", float_format="%.10g")
        console.print(f"[green]Wrote {len(predictions)} prediction(s) to [bold]{output}[/bold][/green]")
        return

    table = Table(title="Predictions")
    table.add_column("#", justify="right", style="dim")
    table.add_column("Predicted", style="cyan")
    for m in labels:
        table.add_column(m.label, justify="right")
    for k, p in enumerate(predictions, start=1):
        table.add_row(str(k), p.label, *(f"{p.lambdas[m.label]:.3f}" for m in labels))
    console.print(table)


@cli.command(name="eval", context_settings=HELP)
@click.argument("data", type=click.Path(dir_okay=False, path_type=Path))
@model_option
@click.pass_context
def eval_cmd(ctx, data, model_path):
    """Accuracy and confusion matrix of the model on labeled DATA."""
    try:
        model = open_model(ctx, model_path)
        dataset = ingest_csv(data)
        if not dataset.labeled:
            fail(f"{data} has no 'label' column")
        predicted = model.predict_labels(dataset.rows)
    except CloudClassError as e:
        fail(str(e))
    evaluate_table(dataset, predicted)


def evaluate_table(dataset: Dataset, predicted: list[str]):
    truth = dataset.labels or []
    correct = sum(t == p for t, p in zip(truth, predicted))
    columns = list(dict.fromkeys(dataset.classes + sorted(set(predicted))))
    table = Table(title="Confusion (rows: true, columns: predicted)")
    table.add_column("", style="cyan", no_wrap=True)
    for c in columns:
        table.add_column(c, justify="right")
    for t in dataset.classes:
        row = [sum(1 for a, b in zip(truth, predicted) if a == t and b == c) for c in columns]
        table.add_row(t, *(str(n) for n in row))
    console.print(table)
    accuracy = correct / len(truth) if truth else float("nan")
    console.print(f"[bold]Accuracy:[/bold] {accuracy:.4f} ({correct}/{len(truth)})")


@cli.command(context_settings=HELP)
@click.option("--json", "as_json", is_flag=True, help="Emit the structured rule document")
@click.option(
    "--output", "-o", type=click.Path(dir_okay=False, path_type=Path),
    help="Write the rules to a file",
)
@model_option
@click.pass_context
def rules(ctx, as_json, output, model_path):
    """Print the model as IF-THEN rules, one per class."""
    try:
        doc = export_rules(open_model(ctx, model_path))
    except CloudClassError as e:
        fail(str(e))
    text = doc.model_dump_json(indent=2) + "\n" if as_json else render_rules_text(doc)
    if output:
        output.write_text(text, encoding="utf-8")
        console.print(f"[green]Wrote {len(doc.rules)} rule(s) to [bold]{output}[/bold][/green]")
    else:
        click.echo(text, nl=False)


@cli.command(context_settings=HELP)
@click.argument("label", required=False)
@model_option
@click.pass_context
def features(ctx, label, model_path):
    """Per-class feature ranking by accumulated density."""
    try:
        model = open_model(ctx, model_path)
        if label and label not in model.classes:
            fail(f"Unknown class '{label}'")
        targets = [model.classes[label]] if label else sorted(
            model.classes.values(), key=lambda m: m.class_id
        )
    except CloudClassError as e:
        fail(str(e))
    names = model.schema or [f"f{i}" for i in range(model.dim or 0)]
    for cls in targets:
        table = Table(title=f"Features of '{cls.label}'")
        table.add_column("Rank", justify="right", style="dim")
        table.add_column("Feature", style="cyan")
        table.add_column("Lambda", justify="right", style="green")
        table.add_column("Selected", style="magenta")
        for rank, f in enumerate(cls.feature_ranking.ranked(), start=1):
            table.add_row(
                str(rank),
                names[f],
                f"{cls.feature_ranking.lambda_cum[f]:.4f}",
                "yes" if cls.feature_mask[f] else "-",
            )
        console.print(table)


@cli.command(name="rename-class", context_settings=HELP)
@click.argument("old")
@click.argument("new")
@model_option
@click.pass_context
def rename_class(ctx, old, new, model_path):
    """Rename class OLD to NEW (e.g. give a discovered class a real name)."""
    try:
        model = open_model(ctx, model_path)
        model.rename_class(old, new)
        save_model(model, resolve_model_path(model_path))
    except CloudClassError as e:
        fail(str(e))
    console.print(f"[green]Renamed [bold]{old}[/bold] to [bold]{new}[/bold][/green]")


def parse_fractions(ctx, param, value):
    if value is None:
        return None
    try:
        fractions = [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"'{value}' is not a comma-separated list of numbers")
    if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
        raise click.BadParameter("fractions must lie in (0, 1]")
    return fractions


@cli.command(name="run-experiment", context_settings=HELP)
@click.argument("data", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("out_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option(
    "--prime-class", "-p", "prime_classes", multiple=True,
    help="Class to prime with (repeatable; default: the first class)",
)
@click.option("--prime-fraction", type=float, default=0.8, show_default=True)
@click.option("--test-fraction", type=float, default=0.3, show_default=True)
@click.option(
    "--schedule", "schedule_path", type=click.Path(dir_okay=False, path_type=Path),
    help="JSON stream schedule (overrides --prime-class/--prime-fraction)",
)
@click.option(
    "--save-model", "save_model_path", type=click.Path(dir_okay=False, path_type=Path),
    help="Also save the final model",
)
@click.option(
    "--sweep", callback=parse_fractions, metavar="FRACTIONS",
    help="Also write learning_curve.csv over these labeled fractions (e.g. 0.01,0.05,0.2)",
)
@click.pass_context
def run_experiment_cmd(
    ctx, data, out_dir, prime_classes, prime_fraction, test_fraction, schedule_path, save_model_path,
    sweep,
):
    """Prime, stream and evaluate on labeled DATA; write the report to OUT_DIR."""
    try:
        dataset = ingest_csv(data)
        if schedule_path:
            schedule = StreamSchedule.model_validate_json(schedule_path.read_text())
        else:
            primed = list(prime_classes) or dataset.classes[:1]
            schedule = default_schedule(dataset.classes, primed, prime_fraction)
        report = run_experiment(
            dataset, schedule, fresh_config(ctx), ctx.obj["seed"], test_fraction
        )
        write_report(report, out_dir)
        if save_model_path:
            save_model(report.model, save_model_path)
        curve = None
        if sweep:
            curve = learning_curve(
                dataset, sweep, fresh_config(ctx), ctx.obj["seed"], test_fraction
            )
            write_learning_curve(curve, out_dir)
    except CloudClassError as e:
        fail(str(e))
    except ValueError as e:
        fail(f"Invalid schedule: {e}")
    except OSError as e:
        fail(f"Cannot read the schedule or write the report: {e}")

    accuracy = "n/a" if report.accuracy is None else f"{report.accuracy:.4f}"
    delays = ", ".join(
        f"{c}={'-' if d is None else d}" for c, d in report.detection_delay.items()
    )
    console.print(
        Panel(
            f"Accuracy: {accuracy} ({report.correct}/{report.evaluated})\n"
            f"Known classes: {len(report.known_classes)} "
            f"(discovered {report.discovered_classes})\n"
            f"Detection delay: {delays or '-'}",
            title="Experiment",
        )
    )
    if curve is not None:
        table = Table(title="Learning curve")
        for column in ("Labeled", "Samples", "Accuracy", "Classes", "Discovered"):
            table.add_column(column, justify="right")
        for row in curve.itertuples(index=False):
            accuracy = "n/a" if pd.isna(row.accuracy) else f"{row.accuracy:.4f}"
            table.add_row(
                f"{row.labeled_fraction:g}",
                str(row.labeled_samples),
                accuracy,
                str(row.known_classes),
                str(row.discovered_classes),
            )
        console.print(table)
    console.print(f"[green]Report written to [bold]{out_dir}[/bold][/green]")


def main():
    cli()
