"""Command-line entry point.

Subcommands tie the generator, trainer, toy experiment and metrics into
reproducible file-based experiments:

    cift train CONFIG.json --out DIR [--seed N]
    cift toy-surface --out DIR [--repeats N] [--grid QX_GRIDxQA_GRID] [--seed N]
    cift affinity-quality AFFINITY.csv LABELS.csv [--top N]
    cift eval MODEL.bin DATASET.json --out DIR [--transfer MODE] [...]

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.  No
command writes outside its --out directory; stdout carries machine-readable
JSON (affinity-quality) or progress lines gated by --verbose.  The env var
CIFT_THREADS caps torch's thread pool; CIFT_THREADS=1 forces the
bitwise-deterministic mode.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path
from types import SimpleNamespace

import click
import jsonschema
import numpy as np
import torch

from .affinity import load_affinity_csv, load_labels_csv
from .datagen import Dataset, gen_synthetic_dataset, make_inference_scenario
from .errors import CiftError, ParameterError
from .inference import evaluate
from .metrics import affinity_error_ratio, affinity_quality
from .model import Model
from .toyexp import DEFAULT_QA_GRID, DEFAULT_QX_GRID, qy_surface, surface_to_csv
from .trainer import AblationFlags, TrainConfig, run_experiment

_ABLATION_SCHEMA = {
    "type": "object",
    "properties": {name: {"type": "boolean"} for name in ("gft", "ubs", "h2g", "cri")},
    "additionalProperties": False,
}

_TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        "epochs": {"type": "integer"},
        "steps_per_epoch": {"type": "integer"},
        "lr_base": {"type": "number"},
        "warmup_epochs": {"type": "integer"},
        "decay_epochs": {"type": "array", "items": {"type": "integer"}},
        "decay_factor": {"type": "number"},
        "k": {"type": "integer"},
        "tau_hom": {"type": "number"},
        "tau_het": {"type": "number"},
        "ablation": _ABLATION_SCHEMA,
        "seed": {"type": "integer"},
        "mc_samples": {"type": "integer"},
        "batch_p": {"type": "integer"},
        "batch_k": {"type": "integer"},
        "feat_dim": {"type": "integer"},
        "momentum": {"type": "number"},
        "weight_decay": {"type": "number"},
        "bn_momentum": {"type": "number"},
        "rho_eu": {"type": "number"},
        "rho_kl": {"type": "number"},
        "eval_shots": {"type": "integer"},
    },
    "additionalProperties": False,
}

_DATASET_SCHEMA = {
    "type": "object",
    "properties": {
        "num_identities": {"type": "integer"},
        "per_id_per_modality": {"type": "integer"},
        "dim": {"type": "integer"},
        "center_scale": {"type": "number"},
        "modality_offset_scale": {"type": "number"},
        "noise_scale": {"type": "number"},
        "seed": {"type": "integer"},
    },
    "required": ["num_identities", "per_id_per_modality", "dim"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "train": _TRAIN_SCHEMA,
        "dataset": _DATASET_SCHEMA,
        "out_dir": {"type": "string"},
    },
    "required": ["dataset"],
    "additionalProperties": False,
}


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _echo_verbose(ctx: click.Context, message: str) -> None:
    if ctx.obj and ctx.obj.get("verbose"):
        click.echo(message)


@click.group()
@click.option("--verbose", is_flag=True, help="Print human-readable progress lines.")
@click.pass_context
def main(ctx: click.Context, verbose: bool) -> None:
    """Desk-scale counterfactual-intervention feature transfer experiments."""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    threads = os.environ.get("CIFT_THREADS")
    if threads is not None:
        try:
            n = int(threads)
        except ValueError:
            _fail(2, f"CIFT_THREADS must be an integer, got {threads!r}")
        if n < 1:
            _fail(2, "CIFT_THREADS must be >= 1")
        torch.set_num_threads(n)


def _load_config_file(config_path: str) -> dict:
    """Parse and schema-validate the experiment config; exit 2 on any violation."""
    try:
        raw = Path(config_path).read_text()
    except OSError as exc:
        _fail(1, f"cannot read config: {exc}")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        _fail(2, f"malformed JSON in {config_path}: {exc}")
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        _fail(2, f"config schema violation: {exc.message}")
    return doc


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the training seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides out_dir in the config).")
@click.pass_context
def train(ctx: click.Context, config_path: str, seed: int | None, out_dir: str | None) -> None:
    """Train a model from a JSON config and write the run artifacts."""
    doc = _load_config_file(config_path)
    train_block = dict(doc.get("train", {}))
    if seed is not None:
        train_block["seed"] = seed
    try:
        config = TrainConfig.from_dict(train_block)
        dataset = gen_synthetic_dataset(**doc["dataset"])
    except ParameterError as exc:
        _fail(2, str(exc))
    target = out_dir or doc.get("out_dir")
    if target is None:
        _fail(2, "no output directory: pass --out or set out_dir in the config")
    _echo_verbose(ctx, f"training {config.epochs}x{config.steps_per_epoch} steps -> {target}")
    try:
        result = run_experiment(config, dataset, out_dir=target)
    except CiftError as exc:
        _fail(1, str(exc))
    _echo_verbose(
        ctx,
        "done: mAP vis2ir={:.4f} ir2vis={:.4f}".format(
            result.retrieval["vis2ir"].map, result.retrieval["ir2vis"].map
        ),
    )


def _parse_grid(_ctx, _param, value: str | None) -> tuple[np.ndarray, np.ndarray] | None:
    """Parse 'qx0,qx1,...xqa0,qa1,...' into the two grid arrays."""
    if value is None:
        return None
    parts = value.split("x")
    if len(parts) != 2:
        raise click.BadParameter("expected QX_GRIDxQA_GRID, e.g. '0,1,2x0,0.5,1'")
    try:
        qx = np.array([float(tok) for tok in parts[0].split(",") if tok != ""])
        qa = np.array([float(tok) for tok in parts[1].split(",") if tok != ""])
    except ValueError as exc:
        raise click.BadParameter(f"non-numeric grid entry: {exc}")
    if qx.size == 0 or qa.size == 0:
        raise click.BadParameter("both grids need at least one value")
    return qx, qa


@main.command("toy-surface")
@click.option("--repeats", type=int, default=100, show_default=True,
              help="Repeats per grid cell.")
@click.option("--grid", callback=_parse_grid, default=None,
              help="Custom grid as QX_GRIDxQA_GRID (comma-separated floats).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True,
              help="Output directory for surface.csv.")
@click.option("--n", type=int, default=100, show_default=True, help="Samples per cell.")
@click.option("--classes", type=int, default=10, show_default=True)
@click.option("--dim", type=int, default=16, show_default=True)
@click.option("--k", type=int, default=10, show_default=True, help="Affinity row support.")
@click.pass_context
def toy_surface(ctx: click.Context, repeats: int, grid, seed: int, out_dir: str,
                n: int, classes: int, dim: int, k: int) -> None:
    """Sweep the controlled (Q_X, Q_A) grid and write the Q_Y surface CSV."""
    qx_grid, qa_grid = grid if grid is not None else (DEFAULT_QX_GRID, DEFAULT_QA_GRID)
    _echo_verbose(ctx, f"surface {len(qx_grid)}x{len(qa_grid)} cells, {repeats} repeats")
    try:
        cells = qy_surface(
            qx_grid=qx_grid, qa_grid=qa_grid, repeats=repeats,
            rng=np.random.default_rng(seed), n=n, classes=classes, dim=dim, k=k,
        )
    except ParameterError as exc:
        _fail(2, str(exc))
    except CiftError as exc:
        _fail(1, str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    surface_to_csv(cells, out / "surface.csv")
    _echo_verbose(ctx, f"wrote {out / 'surface.csv'}")


@main.command("affinity-quality")
@click.argument("affinity_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("labels_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--top", type=int, default=4, show_default=True,
              help="Row entries counted by the error ratio.")
def affinity_quality_cmd(affinity_csv: str, labels_csv: str, top: int) -> None:
    """Print {q_a, error_ratio} for an affinity matrix CSV and a labels CSV."""
    try:
        A = load_affinity_csv(affinity_csv)
        labels = load_labels_csv(labels_csv)
    except (CiftError, ValueError) as exc:
        _fail(2, f"bad input file: {exc}")
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != labels.shape[0]:
        _fail(2, f"dimension mismatch: affinity {A.shape} vs {labels.shape[0]} labels")
    try:
        result = {
            "q_a": affinity_quality(A, labels),
            "error_ratio": affinity_error_ratio(A, labels, top=top),
        }
    except CiftError as exc:
        _fail(1, str(exc))
    click.echo(json.dumps(result))


_TRANSFER_FLAGS = {
    "backbone": AblationFlags.none(),
    "gft": AblationFlags(gft=True, ubs=False, h2g=False, cri=False),
    "h2g": AblationFlags(gft=True, ubs=True, h2g=True, cri=False),
}


@main.command("eval")
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True,
              help="Output directory for the retrieval/quality JSON files.")
@click.option("--transfer", type=click.Choice(sorted(_TRANSFER_FLAGS)), default="h2g",
              show_default=True, help="Inference-time transfer mode.")
@click.option("--tau-hom", type=float, default=0.4, show_default=True)
@click.option("--tau-het", type=float, default=0.2, show_default=True)
@click.option("--k", type=int, default=4, show_default=True)
@click.option("--shots", type=int, default=1, show_default=True,
              help="Gallery samples per identity.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Gallery-draw seed for the scenarios.")
@click.pass_context
def eval_cmd(ctx: click.Context, model_path: str, dataset_path: str, out_dir: str,
             transfer: str, tau_hom: float, tau_het: float, k: int,
             shots: int, seed: int) -> None:
    """Evaluate a saved model on both retrieval directions of a dataset."""
    try:
        model = Model.load(model_path)
        dataset = Dataset.load(dataset_path)
    except (CiftError, ValueError, OSError) as exc:
        _fail(2, f"bad input file: {exc}")
    config = SimpleNamespace(
        ablation=_TRANSFER_FLAGS[transfer], tau_hom=tau_hom, tau_het=tau_het, k=k
    )
    out = Path(out_dir)
    try:
        results = {}
        for name, modality in (("vis2ir", "VIS"), ("ir2vis", "IR")):
            scenario = make_inference_scenario(dataset, modality, shots=shots, seed=seed)
            results[name] = evaluate(model, scenario, config)
        out.mkdir(parents=True, exist_ok=True)
        for name, (retrieval, quality) in results.items():
            retrieval.save(out / f"retrieval_{name}.json")
            quality.save(out / f"quality_{name}.json")
    except CiftError as exc:
        _fail(1, str(exc))
    for name, (retrieval, _) in results.items():
        _echo_verbose(ctx, f"{name}: rank-1={retrieval.cmc[0]:.4f} mAP={retrieval.map:.4f}")


if __name__ == "__main__":
    main()
