"""Command-line pipeline: pretrain, extract, customize, sample, eval, report.

Configuration is a strict line-based "key = value" file with "#" comments
and dotted section keys. Unknown keys, duplicate keys, and malformed
values are errors carrying line numbers. Absent keys take documented
defaults. Every stage writes into a single run directory with fixed
artifact names and is individually re-runnable.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite or
bad checkpoint, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import evaluation, flow
from .checkpoint import load_network, save_network
from .customization import (
    PureCCConfig,
    customize,
    read_trace_csv,
    train_extractor,
    write_trace_csv,
)
from .data import (
    ConceptSpec,
    ContextSpec,
    SceneSpec,
    make_custom_set,
    make_pretrain_set,
    vocabulary,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    DivergenceError,
    PrerequisiteError,
)
from .evaluation import EvalReport, HistogramGrid, RunArtifacts
from .flow import SamplerConfig, TrainConfig, train_flow
from .net import NetworkConfig, build_network

PRETRAINED_FILE = "pretrained.pcck"
EXTRACTOR_FILE = "extractor.pcck"
CUSTOM_FILE = "custom.pcck"
TRACE_FILE = "trace.csv"
EVAL_FILE = "eval.csv"
REPORT_FILE = "report.csv"
CURVES_FILE = "curves.csv"
CONFIG_ECHO_FILE = "config_echo.cfg"

# Seed offsets from the master seed for stages without an explicit seed.
_SEED_OFFSETS = {"data": 1, "pretrain": 2, "extract": 3, "purecc": 4, "eval": 5}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    run_dir: str = "run"
    # scene
    scene_dim: int = 2
    scene_noise_std: float = 0.25
    scene_contexts: tuple[tuple[str, tuple[float, ...], float | None], ...] = (
        ("left", (-1.2, 0.0), None),
        ("right", (1.2, 0.0), None),
    )
    concept_name: str = "v"
    concept_displacement: tuple[float, ...] = (1.2, 1.6)
    concept_std: float = 0.25
    concept_context: str = "left"
    # network
    net_hidden_width: int = 32
    net_layers: int = 3
    net_embed_dim: int = 32
    # pretraining stage
    pretrain_samples: int = 4096
    pretrain_iterations: int = 8000
    pretrain_learning_rate: float = 0.05
    pretrain_batch_size: int = 128
    pretrain_cond_dropout: float = 0.1
    pretrain_seed: int | None = None
    # extractor stage
    extract_iterations: int = 400
    extract_learning_rate: float = 1e-4
    extract_batch_size: int = 2
    extract_seed: int | None = None
    # pure learning stage
    purecc_eta: float = 1.0
    purecc_iterations: int = 400
    purecc_learning_rate: float = 1e-4
    purecc_batch_size: int = 2
    purecc_rank: int = 4
    purecc_lambda_mode: str = "adaptive"
    purecc_lambda_fixed: float = 1.0
    purecc_original_mode: str = "theta2"
    purecc_eps_guard: float = 1e-8
    purecc_n_refs: int = 4
    purecc_full_finetune: bool = False
    purecc_seed: int | None = None
    # sampling and evaluation
    sampler_steps: int = 28
    sampler_guidance_w: float = 1.0
    eval_samples: int = 2000
    eval_bins: int = 64
    eval_bound: float = 6.0
    eval_alpha: float = 1e-6
    eval_seed: int | None = None
    data_seed: int | None = None

    # ------------------------------------------------------------------

    def stage_seed(self, stage: str) -> int:
        explicit = getattr(self, f"{stage}_seed")
        if explicit is not None:
            return explicit
        return self.seed + _SEED_OFFSETS[stage]

    def scene_spec(self) -> SceneSpec:
        contexts = tuple(
            ContextSpec(name, center, self.scene_noise_std if std is None else std)
            for name, center, std in self.scene_contexts
        )
        concept = ConceptSpec(self.concept_name, self.concept_displacement, self.concept_std)
        return SceneSpec(
            dim=self.scene_dim,
            contexts=contexts,
            concept=concept,
            noise_std=self.scene_noise_std,
        )

    def network_config(self, vocab_size: int) -> NetworkConfig:
        return NetworkConfig(
            input_dim=self.scene_dim,
            hidden_width=self.net_hidden_width,
            num_layers=self.net_layers,
            embed_dim=self.net_embed_dim,
            vocab_size=vocab_size,
        )

    def pretrain_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.pretrain_iterations,
            learning_rate=self.pretrain_learning_rate,
            batch_size=self.pretrain_batch_size,
            cond_dropout_prob=self.pretrain_cond_dropout,
            seed=self.stage_seed("pretrain"),
        )

    def extract_config(self) -> PureCCConfig:
        return PureCCConfig(
            iterations=self.extract_iterations,
            learning_rate=self.extract_learning_rate,
            batch_size=self.extract_batch_size,
            rank=self.purecc_rank,
            seed=self.stage_seed("extract"),
        )

    def purecc_config(self) -> PureCCConfig:
        return PureCCConfig(
            eta=self.purecc_eta,
            lambda_mode=self.purecc_lambda_mode,
            lambda_fixed=self.purecc_lambda_fixed,
            original_mode=self.purecc_original_mode,
            eps_guard=self.purecc_eps_guard,
            iterations=self.purecc_iterations,
            learning_rate=self.purecc_learning_rate,
            batch_size=self.purecc_batch_size,
            rank=self.purecc_rank,
            full_finetune=self.purecc_full_finetune,
            seed=self.stage_seed("purecc"),
        )

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            steps=self.sampler_steps,
            guidance_w=self.sampler_guidance_w,
            seed=self.stage_seed("eval"),
        )

    def histogram_grid(self) -> HistogramGrid:
        return HistogramGrid(
            bins=self.eval_bins,
            low=-self.eval_bound,
            high=self.eval_bound,
            smoothing_alpha=self.eval_alpha,
        )

    def validate(self) -> None:
        try:
            spec = self.scene_spec()
            spec.context(self.concept_context)
            vocab = vocabulary(spec)
            self.network_config(vocab.size)
            self.pretrain_config()
            self.extract_config()
            self.purecc_config()
            self.sampler_config()
            self.histogram_grid()
            if self.pretrain_samples < 1 or self.eval_samples < 1:
                raise ValueError("sample counts must be positive")
            if not 1 <= self.purecc_n_refs <= 16:
                raise ValueError("purecc.n_refs must lie in [1, 16]")
        except (ValueError, KeyError) as exc:
            raise ConfigurationError(str(exc)) from exc


# ----------------------------------------------------------------------
# config file parsing


def _parse_int(text: str) -> int:
    return int(text)


def _parse_float(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError("non-finite value")
    return value


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_str(text: str) -> str:
    if not text:
        raise ValueError("empty value")
    return text


def _parse_floats(text: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",")]
    if not parts or any(not p for p in parts):
        raise ValueError(f"not a comma-separated float list: {text!r}")
    return tuple(_parse_float(p) for p in parts)


def _parse_lambda_mode(text: str) -> tuple[str, float | None]:
    if text == "adaptive":
        return "adaptive", None
    if text.startswith("fixed:"):
        return "fixed", _parse_float(text[len("fixed:") :])
    raise ValueError("lambda mode must be adaptive or fixed:<float>")


def _parse_original_mode(text: str) -> str:
    aliases = {
        "theta2": "theta2",
        "trainable_theta2": "theta2",
        "theta3": "theta3",
        "frozen_theta3": "theta3",
    }
    if text not in aliases:
        raise ValueError("original mode must be theta2 or theta3")
    return aliases[text]


# key -> (RunConfig field, parser)
_KEY_TABLE = {
    "seed": ("seed", _parse_int),
    "run_dir": ("run_dir", _parse_str),
    "scene.dim": ("scene_dim", _parse_int),
    "scene.noise_std": ("scene_noise_std", _parse_float),
    "scene.concept.name": ("concept_name", _parse_str),
    "scene.concept.displacement": ("concept_displacement", _parse_floats),
    "scene.concept.std": ("concept_std", _parse_float),
    "scene.concept.context": ("concept_context", _parse_str),
    "net.hidden_width": ("net_hidden_width", _parse_int),
    "net.layers": ("net_layers", _parse_int),
    "net.embed_dim": ("net_embed_dim", _parse_int),
    "pretrain.samples": ("pretrain_samples", _parse_int),
    "pretrain.iterations": ("pretrain_iterations", _parse_int),
    "pretrain.learning_rate": ("pretrain_learning_rate", _parse_float),
    "pretrain.batch_size": ("pretrain_batch_size", _parse_int),
    "pretrain.cond_dropout": ("pretrain_cond_dropout", _parse_float),
    "pretrain.seed": ("pretrain_seed", _parse_int),
    "extract.iterations": ("extract_iterations", _parse_int),
    "extract.learning_rate": ("extract_learning_rate", _parse_float),
    "extract.batch_size": ("extract_batch_size", _parse_int),
    "extract.seed": ("extract_seed", _parse_int),
    "purecc.eta": ("purecc_eta", _parse_float),
    "purecc.iterations": ("purecc_iterations", _parse_int),
    "purecc.learning_rate": ("purecc_learning_rate", _parse_float),
    "purecc.batch_size": ("purecc_batch_size", _parse_int),
    "purecc.rank": ("purecc_rank", _parse_int),
    "purecc.original_mode": ("purecc_original_mode", _parse_original_mode),
    "purecc.eps_guard": ("purecc_eps_guard", _parse_float),
    "purecc.n_refs": ("purecc_n_refs", _parse_int),
    "purecc.full_finetune": ("purecc_full_finetune", _parse_bool),
    "purecc.seed": ("purecc_seed", _parse_int),
    "sampler.steps": ("sampler_steps", _parse_int),
    "sampler.guidance_w": ("sampler_guidance_w", _parse_float),
    "eval.samples": ("eval_samples", _parse_int),
    "eval.bins": ("eval_bins", _parse_int),
    "eval.bound": ("eval_bound", _parse_float),
    "eval.alpha": ("eval_alpha", _parse_float),
    "eval.seed": ("eval_seed", _parse_int),
    "data.seed": ("data_seed", _parse_int),
}

_CONTEXT_PREFIX = "scene.context."


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    values: dict[str, object] = {}
    raw_contexts: list[tuple[int, str, tuple[float, ...]]] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{origin}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in seen:
            raise ConfigurationError(f"{origin}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            if key.startswith(_CONTEXT_PREFIX):
                name = key[len(_CONTEXT_PREFIX) :]
                if not name:
                    raise ValueError("context needs a name")
                raw_contexts.append((lineno, name, _parse_floats(value)))
                continue
            if key == "purecc.lambda_mode":
                mode, fixed = _parse_lambda_mode(value)
                values["purecc_lambda_mode"] = mode
                if fixed is not None:
                    values["purecc_lambda_fixed"] = fixed
                continue
            if key not in _KEY_TABLE:
                raise ConfigurationError(f"{origin}:{lineno}: unknown key {key!r}")
            field_name, parser = _KEY_TABLE[key]
            values[field_name] = parser(value)
        except ConfigurationError:
            raise
        except ValueError as exc:
            raise ConfigurationError(f"{origin}:{lineno}: bad value for {key!r}: {exc}") from exc
    if raw_contexts:
        # A context value is its center, optionally followed by an explicit
        # std; the scene dimension disambiguates the two forms.
        dim = values.get("scene_dim", RunConfig.scene_dim)
        contexts = []
        for lineno, name, numbers in raw_contexts:
            if len(numbers) == dim:
                contexts.append((name, numbers, None))
            elif len(numbers) == dim + 1:
                contexts.append((name, numbers[:-1], numbers[-1]))
            else:
                raise ConfigurationError(
                    f"{origin}:{lineno}: context {name!r} needs {dim} center "
                    f"coordinates plus an optional std"
                )
        values["scene_contexts"] = tuple(contexts)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), origin=str(path))


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse_config_text() restores an equal RunConfig."""

    def fmt(value) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return repr(value)
        if isinstance(value, tuple):
            return ",".join(repr(float(v)) for v in value)
        return str(value)

    lines = [f"seed = {cfg.seed}", f"run_dir = {cfg.run_dir}"]
    lines.append(f"scene.dim = {cfg.scene_dim}")
    lines.append(f"scene.noise_std = {fmt(cfg.scene_noise_std)}")
    for name, center, std in cfg.scene_contexts:
        parts = list(center) + ([] if std is None else [std])
        lines.append(f"scene.context.{name} = {fmt(tuple(parts))}")
    lines.append(f"scene.concept.name = {cfg.concept_name}")
    lines.append(f"scene.concept.displacement = {fmt(cfg.concept_displacement)}")
    lines.append(f"scene.concept.std = {fmt(cfg.concept_std)}")
    lines.append(f"scene.concept.context = {cfg.concept_context}")
    simple = [
        ("net.hidden_width", cfg.net_hidden_width),
        ("net.layers", cfg.net_layers),
        ("net.embed_dim", cfg.net_embed_dim),
        ("pretrain.samples", cfg.pretrain_samples),
        ("pretrain.iterations", cfg.pretrain_iterations),
        ("pretrain.learning_rate", cfg.pretrain_learning_rate),
        ("pretrain.batch_size", cfg.pretrain_batch_size),
        ("pretrain.cond_dropout", cfg.pretrain_cond_dropout),
        ("pretrain.seed", cfg.pretrain_seed),
        ("extract.iterations", cfg.extract_iterations),
        ("extract.learning_rate", cfg.extract_learning_rate),
        ("extract.batch_size", cfg.extract_batch_size),
        ("extract.seed", cfg.extract_seed),
        ("purecc.eta", cfg.purecc_eta),
        ("purecc.iterations", cfg.purecc_iterations),
        ("purecc.learning_rate", cfg.purecc_learning_rate),
        ("purecc.batch_size", cfg.purecc_batch_size),
        ("purecc.rank", cfg.purecc_rank),
        ("purecc.original_mode", cfg.purecc_original_mode),
        ("purecc.eps_guard", cfg.purecc_eps_guard),
        ("purecc.n_refs", cfg.purecc_n_refs),
        ("purecc.full_finetune", cfg.purecc_full_finetune),
        ("purecc.seed", cfg.purecc_seed),
        ("sampler.steps", cfg.sampler_steps),
        ("sampler.guidance_w", cfg.sampler_guidance_w),
        ("eval.samples", cfg.eval_samples),
        ("eval.bins", cfg.eval_bins),
        ("eval.bound", cfg.eval_bound),
        ("eval.alpha", cfg.eval_alpha),
        ("eval.seed", cfg.eval_seed),
        ("data.seed", cfg.data_seed),
    ]
    if cfg.purecc_lambda_mode == "adaptive":
        lines.append("purecc.lambda_mode = adaptive")
    else:
        lines.append(f"purecc.lambda_mode = fixed:{repr(cfg.purecc_lambda_fixed)}")
    for key, value in simple:
        if value is None:
            continue  # derived stage seeds stay derived
        lines.append(f"{key} = {fmt(value)}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# stage commands


def _run_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.run_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: RunConfig, run_dir: Path) -> None:
    (run_dir / CONFIG_ECHO_FILE).write_text(serialize_config(cfg), encoding="utf-8")


def _require(run_dir: Path, filename: str, producer: str) -> Path:
    path = run_dir / filename
    if not path.exists():
        raise PrerequisiteError(f"{path} is missing: run {producer} first")
    return path


def _write_loss_trace(path, losses) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "loss"])
        for i, loss in enumerate(losses):
            writer.writerow([i, f"{loss:.17g}"])


def cmd_pretrain(cfg: RunConfig) -> None:
    run_dir = _run_dir(cfg)
    _echo_config(cfg, run_dir)
    spec = cfg.scene_spec()
    vocab = vocabulary(spec)
    dataset = make_pretrain_set(spec, cfg.pretrain_samples, cfg.stage_seed("data"))
    net = build_network(cfg.network_config(vocab.size), cfg.stage_seed("pretrain"))
    trained, losses = train_flow(net, dataset, cfg.pretrain_config())
    save_network(trained, run_dir / PRETRAINED_FILE)
    _write_loss_trace(run_dir / "pretrain_trace.csv", losses)


def _load_custom_set(cfg: RunConfig):
    spec = cfg.scene_spec()
    return make_custom_set(
        spec, cfg.concept_context, cfg.purecc_n_refs, cfg.stage_seed("data") + 1
    )


def cmd_extract(cfg: RunConfig) -> None:
    run_dir = _run_dir(cfg)
    _echo_config(cfg, run_dir)
    pretrained = load_network(_require(run_dir, PRETRAINED_FILE, "pretrain"))
    custom_set = _load_custom_set(cfg)
    extractor, losses = train_extractor(pretrained, custom_set, cfg.extract_config())
    save_network(extractor, run_dir / EXTRACTOR_FILE)
    _write_loss_trace(run_dir / "extract_trace.csv", losses)


def cmd_customize(cfg: RunConfig) -> None:
    run_dir = _run_dir(cfg)
    _echo_config(cfg, run_dir)
    pretrained = load_network(_require(run_dir, PRETRAINED_FILE, "pretrain"))
    extractor = load_network(_require(run_dir, EXTRACTOR_FILE, "extract"))
    custom_set = _load_custom_set(cfg)
    custom, trace = customize(pretrained, extractor, custom_set, cfg.purecc_config())
    save_network(custom, run_dir / CUSTOM_FILE)
    write_trace_csv(run_dir / TRACE_FILE, trace)


def _parse_condition(cfg: RunConfig, text: str):
    spec = cfg.scene_spec()
    vocab = vocabulary(spec)
    if text == "null":
        return vocab.null()
    if text == "target":
        return vocab.target()
    kind, _, context = text.partition(":")
    if kind in ("base", "complete") and context:
        try:
            spec.context(context)
        except KeyError as exc:
            raise ConfigurationError(str(exc)) from exc
        return getattr(vocab, kind)(context)
    raise ConfigurationError(
        f"bad condition {text!r}: use base:<ctx>, complete:<ctx>, target, or null"
    )


def cmd_sample(cfg: RunConfig, model: str, condition: str, n: int, out: str | None) -> None:
    if n < 1:
        raise ConfigurationError("sample count must be >= 1")
    run_dir = _run_dir(cfg)
    _echo_config(cfg, run_dir)
    named = {
        "pretrained": (PRETRAINED_FILE, "pretrain"),
        "extractor": (EXTRACTOR_FILE, "extract"),
        "custom": (CUSTOM_FILE, "customize"),
    }
    if model in named:
        filename, producer = named[model]
        path = _require(run_dir, filename, producer)
    else:
        path = Path(model)
        if not path.exists():
            raise PrerequisiteError(f"model checkpoint not found: {path}")
    net = load_network(path)
    cond = _parse_condition(cfg, condition)
    samples = flow.sample(net, cond, n, cfg.sampler_config())
    out_path = Path(out) if out else run_dir / "samples.csv"
    flow.save_samples_csv(out_path, samples)


def _evaluate(cfg: RunConfig, run_dir: Path) -> EvalReport:
    pretrained = load_network(_require(run_dir, PRETRAINED_FILE, "pretrain"))
    custom = load_network(_require(run_dir, CUSTOM_FILE, "customize"))
    spec = cfg.scene_spec()
    artifacts = RunArtifacts(
        custom_model=custom,
        original_model=pretrained,
        spec=spec,
        vocab=vocabulary(spec),
        concept_context=cfg.concept_context,
        sampler_cfg=cfg.sampler_config(),
        n=cfg.eval_samples,
        grid=cfg.histogram_grid(),
    )
    return evaluation.report(artifacts)


def cmd_eval(cfg: RunConfig) -> None:
    run_dir = _run_dir(cfg)
    _echo_config(cfg, run_dir)
    report = _evaluate(cfg, run_dir)
    report.to_csv(run_dir / EVAL_FILE)


def cmd_report(cfg: RunConfig) -> None:
    run_dir = _run_dir(cfg)
    _echo_config(cfg, run_dir)
    eval_path = _require(run_dir, EVAL_FILE, "eval")
    trace_path = _require(run_dir, TRACE_FILE, "customize")
    report = EvalReport.from_csv(eval_path)
    report.to_csv(run_dir / REPORT_FILE)
    # Plot-ready per-iteration curves of the pure-learning stage.
    trace = read_trace_csv(trace_path)
    with open(run_dir / CURVES_FILE, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "loss_cc", "loss_purecc", "lambda_star"])
        for diag in trace:
            writer.writerow(
                [
                    diag.iteration,
                    f"{diag.loss_cc:.17g}",
                    f"{diag.loss_purecc:.17g}",
                    f"{diag.lambda_star:.17g}",
                ]
            )


_STAGES = ("pretrain", "extract", "customize", "eval", "report")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="purecc",
        description="Pure concept customization pipeline on synthetic scenes.",
    )
    parser.add_argument("command", choices=_STAGES + ("sample", "run"))
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--run-dir", help="run directory (overrides config)")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--eta", type=float, help="pure-learning loss weight")
    parser.add_argument("--lambda-mode", help="adaptive or fixed:<float>")
    parser.add_argument("--original-mode", help="theta2 or theta3")
    parser.add_argument("--model", default="custom", help="model for sample command")
    parser.add_argument("--condition", default=None, help="condition for sample command")
    parser.add_argument("--n", type=int, default=None, help="sample count")
    parser.add_argument("--out", default=None, help="output CSV for sample command")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        overrides = {}
        if args.run_dir is not None:
            overrides["run_dir"] = args.run_dir
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.eta is not None:
            overrides["purecc_eta"] = args.eta
        if args.lambda_mode is not None:
            mode, fixed = _parse_lambda_mode(args.lambda_mode)
            overrides["purecc_lambda_mode"] = mode
            if fixed is not None:
                overrides["purecc_lambda_fixed"] = fixed
        if args.original_mode is not None:
            overrides["purecc_original_mode"] = _parse_original_mode(args.original_mode)
        if overrides:
            cfg = replace(cfg, **overrides)
            cfg.validate()

        if args.command == "sample":
            condition = args.condition or f"complete:{cfg.concept_context}"
            n = args.n if args.n is not None else cfg.eval_samples
            cmd_sample(cfg, args.model, condition, n, args.out)
        elif args.command == "run":
            for stage in _STAGES:
                globals()[f"cmd_{stage}"](cfg)
        else:
            globals()[f"cmd_{args.command}"](cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PrerequisiteError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
