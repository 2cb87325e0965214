import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import click
from click.core import ParameterSource
from stereosparse.analysis.activations import analyze_depth_selectivity
from stereosparse.analysis.experiments import run_matrix
from stereosparse.analysis.metrics import grid_auc
from stereosparse.config import Config
from stereosparse.core.errors import ConfigurationError
from stereosparse.core.tensor import pad_spatial, same_padding
from stereosparse.data.manifest import Dataset, load_manifest, materialize_synthetic
from stereosparse.models.base import Command, DictTrainConfig, LcaConfig
from stereosparse.models.data import SynthParams
from stereosparse.models.evaluation import ExperimentConfig
from stereosparse.models.network import NetworkSpec, VariantKind
from stereosparse.network.detector import predict
from stereosparse.network.model_io import load_model, save_model
from stereosparse.network.trainer import train_detector
from stereosparse.solvers.dictionary import load_dictionary, save_dictionary, train_dictionary, write_history_csv
from stereosparse.solvers.lca import lca_encode
from stereosparse.utils.config_parser import (
    ParsingError, normalize_key, parse_config_file, resolve_config, write_resolved_config,
)
from stereosparse.utils.sten import read_sten, write_sten

config = Config()
logger = logging.getLogger("stereosparse")

LOG_FORMAT = "%(levelname)s %(asctime)s %(message)s"

REQUIRED = {
    "synth": ["out"],
    "train-dict": ["data", "out"],
    "encode": ["dict", "input", "out"],
    "train-net": ["variant", "data", "out"],
    "eval": ["model", "data"],
    "run-matrix": ["data", "out"],
    "analyze": ["dict", "model", "data", "out"],
}
EXPERIMENT_KEYS = [f.name for f in fields(ExperimentConfig)] + ["lambda"]

def setup_logging(debug: bool) -> None:
    """Log `level ts message` lines to stderr, and to LOG_FILE when configured."""
    log_level = "DEBUG" if debug or config.DEBUG else config.LOG_LEVEL
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if config.LOG_FILE:
        Path(config.LOG_FILE).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(config.LOG_FILE))
    logging.basicConfig(level=log_level, format=LOG_FORMAT, handlers=handlers, force=True)

def _option_key(param: click.Parameter) -> str:
    long_flags = [o for o in param.opts if o.startswith("--")]
    return normalize_key(long_flags[0] if long_flags else param.name)

def resolve_command(ctx: click.Context, extra_keys: Iterable[str] = (),
                    defaults: Optional[Dict[str, Any]] = None) -> Command:
    """Merge option defaults < --config file < explicit flags into a Command."""
    options = {_option_key(p): p for p in ctx.command.params
               if isinstance(p, click.Option) and p.name != "config_path"}
    base = dict(defaults or {})
    for key, param in options.items():
        value = param.get_default(ctx)
        if key not in base or value is not None:
            base[key] = value

    file_values: Dict[str, Any] = {}
    config_path = ctx.params.get("config_path")
    if config_path:
        try:
            from_file = parse_config_file(config_path, set(options) | set(extra_keys))
        except ParsingError as e:
            raise click.UsageError(str(e), ctx=ctx)
        for key, value in from_file.items():
            if key in options and value is not None:
                try:
                    value = options[key].type_cast_value(ctx, value)
                except click.BadParameter as e:
                    raise click.UsageError(f"config key '{key}': {e.message}", ctx=ctx)
            file_values[key] = value

    flags = {k: ctx.params[p.name] for k, p in options.items()
             if ctx.get_parameter_source(p.name) == ParameterSource.COMMANDLINE}
    resolved = resolve_config(base, file_values, flags)

    for key in REQUIRED.get(ctx.command.name, []):
        if resolved.get(key) in (None, ""):
            raise click.UsageError(f"Missing option '--{key.replace('_', '-')}'", ctx=ctx)
    if ctx.command.name == "train-net":
        _check_dictionary_rule(ctx, resolved)
    seed = resolved.get("seed")
    return Command(ctx.command.name, resolved, 1 if seed is None else int(seed))

def _check_dictionary_rule(ctx: click.Context, cfg: Dict[str, Any]) -> None:
    """Dictionary variants need --dict; the others refuse one."""
    variant = VariantKind.parse(cfg["variant"])
    if variant.requires_dictionary and not cfg.get("dict"):
        raise click.UsageError(f"{variant.value} requires --dict", ctx=ctx)
    if not variant.requires_dictionary and cfg.get("dict"):
        raise click.UsageError(f"{variant.value} forbids a dictionary; drop --dict", ctx=ctx)

def _dims(text: str, count: int, name: str) -> Tuple[int, ...]:
    """Parse '3x8x8' style extents."""
    try:
        dims = tuple(int(v) for v in str(text).lower().split("x"))
    except ValueError:
        dims = ()
    if len(dims) != count or min(dims) < 1:
        raise click.UsageError(f"--{name} must be {count} positive integers joined by 'x', got {text!r}")
    return dims

def _n_train(value: Any, available: int) -> int:
    if str(value) == "all":
        return available
    try:
        return int(value)
    except ValueError:
        raise click.UsageError(f"--n-train must be an integer or 'all', got {value!r}")

def _training_split(dataset: Dataset, split: str) -> Dataset:
    subset = dataset.split(split)
    return subset if len(subset) else dataset

def _execute(command: Command, action: Callable[[Command], None]) -> None:
    try:
        action(command)
    except click.ClickException:
        raise
    except Exception as e:
        logger.error(f"{command.name} failed: {e}")
        raise click.ClickException(str(e))

def _lca(cfg: Dict[str, Any]) -> LcaConfig:
    return LcaConfig(lam=cfg["lambda"], max_iters=cfg["iters"]).validate()

def config_option(f: Callable) -> Callable:
    return click.option("--config", "config_path", type=click.Path(dir_okay=False),
                        help="JSON file of flag values; explicit flags win")(f)

def seed_option(f: Callable) -> Callable:
    return click.option("--seed", type=int, default=config.SEED, help="Seed for all randomness in the run")(f)

def workers_option(f: Callable) -> Callable:
    return click.option("--workers", type=int, default=config.WORKERS, help="Worker threads")(f)

def lca_options(f: Callable) -> Callable:
    f = click.option("--iters", type=int, default=400, help="Maximum LCA iterations")(f)
    return click.option("--lambda", "lam", type=float, default=0.1, help="Sparsity weight")(f)

@click.group()
@click.option("--debug", is_flag=True, help="Enable debug logging")
def stereosparse(debug: bool) -> None:
    """Convolutional sparse coding and vehicle detection on stereo video."""
    setup_logging(debug)

@stereosparse.command("synth")
@config_option
@click.option("--n", type=int, default=500, help="Training examples")
@click.option("--n-test", type=int, default=200, help="Test examples")
@click.option("--objects", type=int, default=2, help="Vehicles per scene")
@click.option("--levels", default=None, help="Comma-separated disparity levels, e.g. 3,10")
@click.option("--noise", type=float, default=4.0, help="Pixel noise standard deviation")
@click.option("--out", default=None, help="Output directory")
@seed_option
@workers_option
@click.pass_context
def synth(ctx: click.Context, **_: Any) -> None:
    """Render a synthetic stereo-video dataset and its manifest."""
    def action(command: Command) -> None:
        cfg = command.config
        levels = None
        if cfg["levels"]:
            try:
                levels = tuple(int(v) for v in str(cfg["levels"]).split(","))
            except ValueError:
                raise click.UsageError(f"--levels must be comma-separated integers, got {cfg['levels']!r}")
        params = SynthParams(n_objects=cfg["objects"], disparity_levels=levels, noise=cfg["noise"])
        write_resolved_config(cfg, cfg["out"])
        materialize_synthetic(cfg["out"], cfg["n"], cfg["n_test"], command.seed, params, cfg["workers"])

    _execute(resolve_command(ctx), action)

@stereosparse.command("train-dict")
@config_option
@click.option("--data", default=None, help="Manifest of training inputs")
@click.option("--out", default=None, help="Dictionary STEN file")
@click.option("--features", type=int, default=64, help="Dictionary atoms")
@click.option("--kernel", default="3x8x8", help="Atom extents txhxw")
@click.option("--stride", default="1x2x2", help="Stride txhxw")
@lca_options
@click.option("--batches", type=int, default=1000, help="Training batches")
@click.option("--batch-size", type=int, default=16, help="Examples per batch")
@click.option("--lr", type=float, default=0.1, help="Fraction of a per-atom Newton step")
@click.option("--split", default="train", help="Manifest split to learn from")
@seed_option
@workers_option
@click.pass_context
def train_dict(ctx: click.Context, **_: Any) -> None:
    """Learn a convolutional dictionary with LCA inference."""
    def action(command: Command) -> None:
        cfg = command.config
        out = Path(cfg["out"])
        dict_cfg = DictTrainConfig(lr=cfg["lr"], batches=cfg["batches"], batch_size=cfg["batch_size"],
                                   lca=_lca(cfg), seed=command.seed, features=cfg["features"],
                                   kernel=_dims(cfg["kernel"], 3, "kernel"), stride=_dims(cfg["stride"], 3, "stride"),
                                   workers=cfg["workers"]).validate()
        write_resolved_config(cfg, out.parent)
        dataset = _training_split(load_manifest(cfg["data"], cfg["workers"]), cfg["split"])
        dictionary, history = train_dictionary([e.input for e in dataset], dict_cfg)
        save_dictionary(out, dictionary)
        write_history_csv(history, str(out.parent / "dict_history.csv"))
        logger.info(f"Wrote {dictionary.features}-atom dictionary to {out}")

    _execute(resolve_command(ctx), action)

@stereosparse.command("encode")
@config_option
@click.option("--dict", "dict_path", default=None, help="Dictionary STEN file")
@click.option("--input", "input_path", default=None, help="Input STEN file, [t,h,w,c] or [b,t,h,w,c]")
@click.option("--out", default=None, help="Activations STEN file")
@click.option("--stride", default="1x2x2", help="Dictionary stride txhxw")
@click.option("--pad/--no-pad", default=False, help="Apply same padding before encoding")
@lca_options
@seed_option
@click.pass_context
def encode(ctx: click.Context, **_: Any) -> None:
    """Encode one input with a dictionary; also writes the energy trace CSV."""
    def action(command: Command) -> None:
        cfg = command.config
        out = Path(cfg["out"])
        phi = load_dictionary(cfg["dict"], _dims(cfg["stride"], 3, "stride"))
        x = read_sten(cfg["input"])
        single = x.ndim == 4
        x = x[None] if single else x
        if cfg["pad"]:
            x = pad_spatial(x, same_padding(phi.kernel_size, phi.stride))
        write_resolved_config(cfg, out.parent)
        state = lca_encode(x, phi, _lca(cfg))
        write_sten(out, state.a[0] if single else state.a)
        trace = out.with_name(f"{out.stem}_energy.csv")
        with open(trace, "w") as f:
            f.write("iter,recon_err,sparsity,total,nnz\n")
            for i, r in enumerate(state.energy_trace):
                f.write(f"{i},{r.recon_err:.6g},{r.sparsity:.6g},{r.total:.6g},{r.nnz}\n")
        logger.info(f"Encoded {cfg['input']}: {state.iterations} iterations, nnz {state.energy.nnz}/{state.a.size}")

    _execute(resolve_command(ctx), action)

@stereosparse.command("train-net")
@config_option
@click.option("--variant", type=click.Choice([k.value for k in VariantKind]), default=None, help="First-layer variant")
@click.option("--depth", type=click.IntRange(2, 4), default=3, help="Network depth")
@click.option("--dict", "dict_path", default=None, help="Dictionary STEN file (dictionary variants only)")
@click.option("--stride", default="1x2x2", help="First-layer stride txhxw; must match the dictionary's")
@click.option("--data", default=None, help="Manifest of labelled examples")
@click.option("--n-train", default="all", help="Training examples, or 'all'")
@click.option("--epochs", type=int, default=30, help="Training epochs")
@click.option("--batch-size", type=int, default=16, help="Examples per batch")
@click.option("--lr", type=float, default=1e-3, help="Adam learning rate")
@click.option("--features", type=int, default=64, help="First-layer features")
@click.option("--mid-features", type=int, default=64, help="Features of the middle layers")
@click.option("--window", default="16x32", help="Detection window hxw in pixels")
@lca_options
@click.option("--out", default=None, help="Model file")
@click.option("--split", default="train", help="Manifest split to train on")
@seed_option
@workers_option
@click.pass_context
def train_net(ctx: click.Context, **_: Any) -> None:
    """Train a detector of one variant and depth."""
    def action(command: Command) -> None:
        cfg = command.config
        variant = VariantKind.parse(cfg["variant"])
        out = Path(cfg["out"])
        dataset = _training_split(load_manifest(cfg["data"], cfg["workers"]), cfg["split"])
        examples = dataset.examples()
        frames, height, width, channels = examples[0].input.shape
        first_stride = _dims(cfg["stride"], 3, "stride")
        dictionary = None
        features, first_kernel = cfg["features"], (frames, 8, 8)
        if cfg["dict"]:
            dictionary = load_dictionary(cfg["dict"], first_stride)
            features, first_kernel = dictionary.features, dictionary.kernel_size
        spec = NetworkSpec(variant=variant, depth=cfg["depth"], frames=frames, height=height, width=width,
                           channels=channels, features=features, mid_features=cfg["mid_features"],
                           first_kernel=first_kernel, first_stride=first_stride,
                           window=_dims(cfg["window"], 2, "window"), lca=_lca(cfg))
        write_resolved_config(cfg, out.parent)
        params, curve = train_detector(spec, examples, _n_train(cfg["n_train"], len(examples)), cfg["epochs"],
                                       command.seed, dictionary, cfg["batch_size"], cfg["lr"], cfg["workers"])
        save_model(out, params, spec)
        with open(out.with_name(f"{out.stem}_loss.csv"), "w") as f:
            f.write("epoch,loss\n")
            for epoch, loss in enumerate(curve):
                f.write(f"{epoch},{loss:.6f}\n")

    _execute(resolve_command(ctx), action)

@stereosparse.command("eval")
@config_option
@click.option("--model", default=None, help="Model file")
@click.option("--data", default=None, help="Manifest of labelled examples")
@click.option("--split", default="test", help="Manifest split to score; all examples when absent")
@seed_option
@workers_option
@click.pass_context
def evaluate(ctx: click.Context, **_: Any) -> None:
    """Print the PR-AUC of a model over a manifest split."""
    def action(command: Command) -> None:
        cfg = command.config
        params, spec = load_model(cfg["model"])
        examples = _training_split(load_manifest(cfg["data"], cfg["workers"]), cfg["split"]).examples()
        value = grid_auc(predict(params, spec, examples, cfg["workers"]))
        logger.info(f"{spec.variant.label} depth {spec.depth}: auc {value:.6f} over {len(examples)} examples")
        click.echo(f"auc={value:.6f}")

    _execute(resolve_command(ctx), action)

@stereosparse.command("run-matrix")
@config_option
@click.option("--data", default=None, help="Manifest (overrides the config file)")
@click.option("--dict", "dict_path", default=None, help="Dictionary STEN file (overrides the config file)")
@click.option("--out", default=None, help="Results directory")
@click.option("--workers", type=int, default=None, help="Cells run in parallel")
@click.pass_context
def run_matrix_command(ctx: click.Context, **_: Any) -> None:
    """Run the variants x depths x n_train x seeds experiment."""
    command = resolve_command(ctx, EXPERIMENT_KEYS, ExperimentConfig().to_dict())

    def action(command: Command) -> None:
        cfg = ExperimentConfig.from_dict({k: v for k, v in command.config.items() if k != "out"})
        write_resolved_config(dict(cfg.to_dict(), out=command.config["out"]), command.config["out"])
        report = run_matrix(cfg, command.config["out"])
        for cell in report.cells():
            logger.info(f"{cell.variant} depth {cell.depth} n={cell.n_train}: "
                        f"median {cell.median:.4f} range {cell.range:.4f}")

    _execute(command, action)

@stereosparse.command("analyze")
@config_option
@click.option("--dict", "dict_path", default=None, help="Dictionary STEN file")
@click.option("--model", default=None, help="ConvSup control model")
@click.option("--stride", default="1x2x2", help="Dictionary stride txhxw; must match the model's first layer")
@click.option("--data", default=None, help="Manifest with disparity maps")
@click.option("--split", default="test", help="Manifest split to analyze")
@click.option("--limit", type=int, default=20, help="Examples to analyze")
@lca_options
@click.option("--out", default=None, help="Output directory")
@seed_option
@workers_option
@click.pass_context
def analyze(ctx: click.Context, **_: Any) -> None:
    """Depth selectivity of sparse codes against a sparsity-matched ConvSup control."""
    def action(command: Command) -> None:
        cfg = command.config
        params, spec = load_model(cfg["model"])
        stride = _dims(cfg["stride"], 3, "stride")
        if stride != spec.first_stride:
            raise ConfigurationError(f"dictionary stride {stride} does not match the model's first-layer stride "
                                     f"{spec.first_stride}")
        dictionary = load_dictionary(cfg["dict"], stride)
        dataset = _training_split(load_manifest(cfg["data"], cfg["workers"]), cfg["split"])
        limit = min(cfg["limit"], len(dataset))
        write_resolved_config(cfg, cfg["out"])
        report = analyze_depth_selectivity(dictionary, params, spec, dataset.examples()[:limit],
                                           dataset.disparities()[:limit], cfg["out"], _lca(cfg), cfg["workers"])
        click.echo(f"sparse_selectivity={report.sparse_mean:.6f} control_selectivity={report.control_mean:.6f}")

    _execute(resolve_command(ctx), action)

def parse_args(argv: Sequence[str]) -> Command:
    """Resolve a command line into a Command without running it.

    Raises click.UsageError on unknown subcommands or flags and on missing
    required options.
    """
    args = [a for a in argv if a != "--debug"]
    if not args:
        raise click.UsageError("Missing command")
    name, rest = args[0], args[1:]
    command = stereosparse.get_command(None, name)
    if command is None:
        raise click.UsageError(f"No such command '{name}'")
    ctx = command.make_context(name, list(rest))
    extra, defaults = ((EXPERIMENT_KEYS, ExperimentConfig().to_dict()) if name == "run-matrix" else ((), None))
    return resolve_command(ctx, extra, defaults)

if __name__ == "__main__":
    stereosparse()
