"""Experiment orchestration: specs, validation, and end-to-end runs.

A single JSON-serializable spec drives every command (synth, preprocess,
train, eval, sweep, augbench). Runs expand into folds x repeats with seeds
derived per (subject, fold, repeat), write a results CSV plus summary JSON,
and record every artifact in a run manifest that carries the config
fingerprint; timestamps live only in the manifest so re-runs are
byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, synth, trainer
from .augment import NoiseConfig, NoiseDomain, NoiseKind
from .corpus import TaskKind, label_map, load_corpus, n_classes
from .dsp import EnvelopeTrial, PreprocessConfig, preprocess
from .loss import LossConfig
from .metrics import RunResult
from .modality import EmbeddingTable, load_embedding_table
from .net.model import Model, ModelConfig, save_checkpoint
from .synth import SynthConfig, TemplateMode
from .trainer import SplitMode, TrainConfig

COMMANDS = ("synth", "preprocess", "train", "eval", "sweep", "augbench")
APPROACHES = ("auto", "single", "masd")
AUTO_BATCH = 0  # sentinel: resolve to 48 (within) or 720 (cross)
DEFAULT_SWEEP_GRID = (0.0, 0.1, 1.0, 10.0)
ENVELOPE_FS = 200.0


@dataclass
class ExperimentSpec:
    command: str = "train"
    dataset: str | None = None
    corpus: str | None = None
    text_emb: str | None = None
    speech_emb: str | None = None
    cv: str = "within"
    task: str = "word"
    approach: str = "auto"
    repeats: int = 20
    folds: int | None = None
    seed: int = 0
    out: str = "out"
    preset: str | None = None
    save_checkpoints: bool = True
    results: str | None = None
    energy_map: str | None = None
    sweep_param: str = "lambda_t"
    sweep_grid: tuple[float, ...] = DEFAULT_SWEEP_GRID
    train: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=AUTO_BATCH))
    model: dict = field(default_factory=dict)
    synth: SynthConfig = field(default_factory=SynthConfig)


def spec_to_dict(spec: ExperimentSpec) -> dict:
    def encode(value):
        if isinstance(value, (TaskKind, NoiseKind, NoiseDomain, TemplateMode)):
            return value.value
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {k: encode(v) for k, v in dataclasses.asdict(value).items()}
        if isinstance(value, tuple):
            return list(value)
        if isinstance(value, dict):
            return {k: encode(v) for k, v in value.items()}
        return value

    out = {}
    for f in dataclasses.fields(spec):
        out[f.name] = encode(getattr(spec, f.name))
    return out


def _noise_from_dict(d: dict | None) -> NoiseConfig | None:
    if d is None:
        return None
    kwargs = dict(d)
    if "kind" in kwargs and kwargs["kind"] is not None:
        kwargs["kind"] = NoiseKind(kwargs["kind"])
    return NoiseConfig(**kwargs)


def _train_from_dict(d: dict) -> TrainConfig:
    kwargs = dict(d)
    if "loss" in kwargs and isinstance(kwargs["loss"], dict):
        kwargs["loss"] = LossConfig(**kwargs["loss"])
    if "augmentation" in kwargs:
        kwargs["augmentation"] = _noise_from_dict(kwargs["augmentation"])
    if "noise_domain" in kwargs and isinstance(kwargs["noise_domain"], str):
        kwargs["noise_domain"] = NoiseDomain(kwargs["noise_domain"])
    return TrainConfig(**kwargs)


def _synth_from_dict(d: dict) -> SynthConfig:
    kwargs = dict(d)
    if "template_mode" in kwargs and isinstance(kwargs["template_mode"], str):
        kwargs["template_mode"] = TemplateMode(kwargs["template_mode"])
    return SynthConfig(**kwargs)


def spec_from_dict(d: dict) -> ExperimentSpec:
    kwargs = dict(d)
    if "train" in kwargs and isinstance(kwargs["train"], dict):
        kwargs["train"] = _train_from_dict(kwargs["train"])
    if "synth" in kwargs and isinstance(kwargs["synth"], dict):
        kwargs["synth"] = _synth_from_dict(kwargs["synth"])
    if "sweep_grid" in kwargs and isinstance(kwargs["sweep_grid"], list):
        kwargs["sweep_grid"] = tuple(float(v) for v in kwargs["sweep_grid"])
    unknown = set(kwargs) - {f.name for f in dataclasses.fields(ExperimentSpec)}
    if unknown:
        raise ValueError(f"unknown spec fields: {sorted(unknown)}")
    return ExperimentSpec(**kwargs)


def fingerprint(spec: ExperimentSpec) -> str:
    canonical = json.dumps(spec_to_dict(spec), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def apply_preset(spec: ExperimentSpec) -> ExperimentSpec:
    if spec.preset is None:
        return spec
    if spec.preset != "quick":
        raise ValueError(f"unknown preset {spec.preset!r}")
    return dataclasses.replace(spec, repeats=min(spec.repeats, 3), folds=1)


def validate(spec: ExperimentSpec) -> list[str]:
    """Collect invariant violations; an empty list means the spec is runnable."""
    problems: list[str] = []
    if spec.command not in COMMANDS:
        problems.append(f"command: unknown {spec.command!r}, expected one of {COMMANDS}")
    if spec.approach not in APPROACHES:
        problems.append(f"approach: unknown {spec.approach!r}")
    try:
        TaskKind(spec.task)
    except ValueError:
        problems.append(f"task: unknown {spec.task!r}")
    if spec.cv not in ("within", "cross"):
        problems.append(f"cv: must be 'within' or 'cross', got {spec.cv!r}")
    if spec.repeats < 1:
        problems.append("repeats: must be >= 1")
    if spec.folds is not None and spec.folds < 1:
        problems.append("folds: must be >= 1 when set")
    if spec.train.loss.tau <= 0:
        problems.append("loss.tau must be > 0")
    if spec.train.loss.lambda_t < 0 or spec.train.loss.lambda_s < 0:
        problems.append("loss.lambda_t/lambda_s must be >= 0")
    if spec.train.batch_size != AUTO_BATCH and spec.train.batch_size < 1:
        problems.append("train.batch_size must be >= 1 (0 means auto)")
    if spec.train.max_epochs < 1:
        problems.append("train.max_epochs must be >= 1")
    if spec.train.patience < 1:
        problems.append("train.patience must be >= 1")
    if spec.train.lr <= 0:
        problems.append("train.lr must be > 0")
    if spec.train.weight_decay < 0:
        problems.append("train.weight_decay must be >= 0")
    noise = spec.train.augmentation
    if noise is not None:
        if noise.p_s + noise.p_p > 1.0:
            problems.append("noise.p_s + noise.p_p must not exceed 1")
        else:
            try:
                noise.validate()
            except ValueError as exc:
                problems.append(f"noise: {exc}")
    has_tables = spec.text_emb is not None or spec.speech_emb is not None
    if spec.approach == "masd" and not has_tables:
        problems.append("approach: masd requires at least one embedding table")
    if spec.approach == "single" and has_tables:
        problems.append("approach: single-modality mode takes no embedding tables")
    if spec.command in ("train", "sweep", "augbench") and spec.dataset is None:
        problems.append("dataset: required for this command")
    if spec.command == "preprocess" and spec.dataset is None:
        problems.append("dataset: required for preprocess")
    if spec.command == "sweep":
        if spec.sweep_param not in ("lambda_t", "lambda_s"):
            problems.append(f"sweep_param: unknown {spec.sweep_param!r}")
        if len(spec.sweep_grid) == 0:
            problems.append("sweep_grid: must be nonempty")
        needed = "text_emb" if spec.sweep_param == "lambda_t" else "speech_emb"
        if getattr(spec, needed) is None:
            problems.append(f"sweep_param {spec.sweep_param} requires {needed}")
    if spec.command == "eval" and spec.results is None and spec.energy_map is None:
        problems.append("eval: needs results (to aggregate) or energy_map (with dataset)")
    if spec.energy_map is not None and spec.energy_map not in ("word", "time"):
        problems.append(f"energy_map: must be 'word' or 'time', got {spec.energy_map!r}")
    if spec.energy_map is not None and spec.dataset is None:
        problems.append("energy_map: requires a dataset")
    try:
        spec.synth.validate()
    except ValueError as exc:
        problems.append(f"synth: {exc}")
    return problems


def run_seed(base: int, subject: int, fold: int, repeat: int) -> int:
    seq = np.random.SeedSequence([int(base) % 2**64, subject, fold, repeat])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


@dataclass
class _RunContext:
    spec: ExperimentSpec
    corpus_entries: list
    trials: list[EnvelopeTrial]
    text_table: EmbeddingTable | None
    speech_table: EmbeddingTable | None
    task: TaskKind
    class_of_word: np.ndarray
    num_classes: int


def _load_envelopes(spec: ExperimentSpec) -> list[EnvelopeTrial]:
    raw = synth.read_dataset(spec.dataset)
    if not raw:
        raise ValueError("dataset is empty")
    if abs(raw[0].fs - ENVELOPE_FS) < 1e-9:
        return [
            EnvelopeTrial(
                data=np.asarray(t.data, dtype=np.float64),
                word_id=t.word_id,
                block=t.block,
                subject=t.subject,
                fs=t.fs,
            )
            for t in raw
        ]
    cfg = PreprocessConfig()
    return [preprocess(t, cfg) for t in raw]


def _prepare_context(spec: ExperimentSpec) -> _RunContext:
    corpus_entries = load_corpus(spec.corpus)
    trials = _load_envelopes(spec)
    text_table = load_embedding_table(spec.text_emb, corpus_entries) if spec.text_emb else None
    speech_table = load_embedding_table(spec.speech_emb, corpus_entries) if spec.speech_emb else None
    task = TaskKind(spec.task)
    mapping = label_map(corpus_entries, task)
    class_of_word = np.array([mapping[w] for w in range(len(corpus_entries))], dtype=int)
    return _RunContext(
        spec=spec,
        corpus_entries=corpus_entries,
        trials=trials,
        text_table=text_table,
        speech_table=speech_table,
        task=task,
        class_of_word=class_of_word,
        num_classes=n_classes(corpus_entries, task),
    )


def _model_config(ctx: _RunContext, batch_shape: tuple[int, int]) -> ModelConfig:
    channels, samples = batch_shape
    f1 = ctx.text_table.dim if ctx.text_table is not None else int(ctx.spec.model.get("branch_dim_t", 64))
    f2 = ctx.speech_table.dim if ctx.speech_table is not None else int(ctx.spec.model.get("branch_dim_s", 64))
    kwargs = {
        k: v
        for k, v in ctx.spec.model.items()
        if k in {"temporal_kernel", "n_temporal_filters", "depth_multiplier",
                 "separable_kernel", "pool1", "pool2", "dropout_p", "bn_momentum"}
    }
    return ModelConfig(
        channels=channels,
        samples=samples,
        n_classes=ctx.num_classes,
        branch_dims=(f1, f2),
        **kwargs,
    )


def _resolve_batch(train_cfg: TrainConfig, mode: SplitMode) -> int:
    if train_cfg.batch_size != AUTO_BATCH:
        return train_cfg.batch_size
    return 48 if mode is SplitMode.WITHIN_SUBJECT else 720


def _plan_runs(ctx: _RunContext) -> list[tuple[int, int]]:
    """(subject_or_heldout, fold) pairs covered by this spec."""
    spec = ctx.spec
    subjects = sorted({t.subject for t in ctx.trials})
    if spec.cv == "within":
        folds = range(trainer.N_FOLDS if spec.folds is None else min(spec.folds, trainer.N_FOLDS))
        return [(s, f) for s in subjects for f in folds]
    held = subjects if spec.folds is None else subjects[: spec.folds]
    return [(s, s) for s in held]


def _execute_training(ctx: _RunContext, approach_label: str, out_dir: Path,
                      lambda_override: dict | None = None,
                      train_cfg: TrainConfig | None = None,
                      artifacts: list[str] | None = None) -> list[RunResult]:
    spec = ctx.spec
    base_train = train_cfg if train_cfg is not None else spec.train
    mode = SplitMode.WITHIN_SUBJECT if spec.cv == "within" else SplitMode.CROSS_SUBJECT
    batch = _resolve_batch(base_train, mode)
    results: list[RunResult] = []
    fp = fingerprint(spec)
    hist_dir = out_dir / "histories"
    hist_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    if spec.save_checkpoints:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    by_subject: dict[int, list[int]] = {}
    for i, t in enumerate(ctx.trials):
        by_subject.setdefault(t.subject, []).append(i)

    for subject, fold in _plan_runs(ctx):
        if mode is SplitMode.WITHIN_SUBJECT:
            subject_trials = [ctx.trials[i] for i in by_subject[subject]]
            split = trainer.split_within(subject_trials, fold, spec.seed)
            run_trials = subject_trials
        else:
            split = trainer.split_cross(ctx.trials, subject, spec.seed)
            run_trials = ctx.trials
        for repeat in range(spec.repeats):
            seed = run_seed(spec.seed, subject, fold, repeat)
            loss_cfg = dataclasses.replace(base_train.loss, **(lambda_override or {}))
            cfg = dataclasses.replace(base_train, batch_size=batch, seed=seed, loss=loss_cfg)
            c, t_len = run_trials[0].data.shape
            model = Model(_model_config(ctx, (c, t_len)), seed=seed)
            fit_result = trainer.fit(
                model, split, run_trials, cfg,
                text_table=ctx.text_table, speech_table=ctx.speech_table,
                class_of_word=ctx.class_of_word,
            )
            scores = trainer.evaluate_split(model, split, run_trials, cfg,
                                            class_of_word=ctx.class_of_word,
                                            n_classes=ctx.num_classes)
            result = RunResult(
                approach=approach_label,
                task=ctx.task,
                mode=spec.cv,
                subject=subject,
                fold=fold,
                seed=seed,
                top1=scores["top1"],
                top5=scores["top5"],
                bca=scores["bca"],
                n_test=scores["n_test"],
                fingerprint=fp,
            )
            result.validate()
            results.append(result)
            tag = f"s{subject}_f{fold}_r{repeat}"
            hist_path = hist_dir / f"history_{approach_label}_{tag}.csv"
            trainer.write_history_csv(fit_result.history, hist_path)
            if artifacts is not None:
                artifacts.append(str(hist_path))
            if spec.save_checkpoints:
                ckpt_path = ckpt_dir / f"ckpt_{approach_label}_{tag}.bin"
                save_checkpoint(model, ckpt_path)
                if artifacts is not None:
                    artifacts.append(str(ckpt_path))
    return results


def _write_manifest(spec: ExperimentSpec, out_dir: Path, artifacts: list[str]) -> None:
    manifest = {
        "command": spec.command,
        "fingerprint": fingerprint(spec),
        "seed": spec.seed,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "spec": spec_to_dict(spec),
        "artifacts": sorted(artifacts),
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _cmd_synth(spec: ExperimentSpec, out_dir: Path) -> list[str]:
    corpus_entries = load_corpus(spec.corpus)
    table = None
    if spec.text_emb:
        table = load_embedding_table(spec.text_emb, corpus_entries)
    elif spec.speech_emb:
        table = load_embedding_table(spec.speech_emb, corpus_entries)
    target = Path(spec.dataset) if spec.dataset else out_dir / "dataset"
    trials = synth.generate(spec.synth, corpus_entries, table)
    synth.write_dataset(trials, target)
    return [str(target / "manifest.json")]


def _cmd_preprocess(spec: ExperimentSpec, out_dir: Path) -> list[str]:
    raw = synth.read_dataset(spec.dataset)
    cfg = PreprocessConfig()
    envelopes = [preprocess(t, cfg) for t in raw]
    synth.write_dataset(envelopes, out_dir)
    return [str(out_dir / "manifest.json")]


def _cmd_train(spec: ExperimentSpec, out_dir: Path) -> list[str]:
    ctx = _prepare_context(spec)
    label = spec.approach
    if label == "auto":
        label = "masd" if (ctx.text_table or ctx.speech_table) else "single"
    artifacts: list[str] = []
    results = _execute_training(ctx, label, out_dir, artifacts=artifacts)
    results_path = out_dir / "results.csv"
    metrics.write_results_csv(results, results_path)
    summary_path = out_dir / "summary.json"
    metrics.write_summary_json(metrics.aggregate(results), summary_path)
    return [str(results_path), str(summary_path), *artifacts]


def _cmd_eval(spec: ExperimentSpec, out_dir: Path) -> list[str]:
    artifacts = []
    if spec.results:
        results = metrics.read_results_csv(spec.results)
        summary_path = out_dir / "summary.json"
        metrics.write_summary_json(metrics.aggregate(results), summary_path)
        artifacts.append(str(summary_path))
    if spec.energy_map:
        trials = _load_envelopes(spec)
        matrix, labels = metrics.energy_map(trials, group_by=spec.energy_map)
        map_path = out_dir / "energy_map.csv"
        metrics.write_energy_map_csv(matrix, labels, map_path)
        artifacts.append(str(map_path))
    return artifacts


def _cmd_sweep(spec: ExperimentSpec, out_dir: Path) -> list[str]:
    ctx = _prepare_context(spec)
    rows = []
    all_results: list[RunResult] = []
    artifacts: list[str] = []
    for value in spec.sweep_grid:
        label = f"{spec.sweep_param}={value:g}"
        results = _execute_training(ctx, label, out_dir, lambda_override={spec.sweep_param: value},
                                    artifacts=artifacts)
        all_results.extend(results)
        summary = metrics.aggregate(results)
        avg = summary["approaches"][label]["average"]
        rows.append([spec.sweep_param, repr(float(value)),
                     repr(avg["top1_mean"]), repr(avg["top5_mean"]), repr(avg["bca_mean"])])
    sweep_path = out_dir / "sweep.csv"
    with open(sweep_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "value", "top1_mean", "top5_mean", "bca_mean"])
        writer.writerows(rows)
    results_path = out_dir / "results.csv"
    metrics.write_results_csv(all_results, results_path)
    return [str(sweep_path), str(results_path), *artifacts]


def _cmd_augbench(spec: ExperimentSpec, out_dir: Path) -> list[str]:
    ctx = _prepare_context(spec)
    base_noise = spec.train.augmentation or NoiseConfig()
    kinds = [None, NoiseKind.GAUSSIAN, NoiseKind.POISSON, NoiseKind.PINK, NoiseKind.SALT_PEPPER]
    rows = []
    all_results: list[RunResult] = []
    artifacts: list[str] = []
    for kind in kinds:
        if kind is None:
            label = "no_aug"
            cfg = dataclasses.replace(spec.train, augmentation=None)
        else:
            label = f"{kind.value}_{spec.train.noise_domain.value}"
            cfg = dataclasses.replace(spec.train, augmentation=dataclasses.replace(base_noise, kind=kind))
        results = _execute_training(ctx, label, out_dir, train_cfg=cfg, artifacts=artifacts)
        all_results.extend(results)
        summary = metrics.aggregate(results)
        avg = summary["approaches"][label]["average"]
        rows.append([label, repr(avg["top1_mean"]), repr(avg["top5_mean"]), repr(avg["bca_mean"])])
    bench_path = out_dir / "augbench.csv"
    with open(bench_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["approach", "top1_mean", "top5_mean", "bca_mean"])
        writer.writerows(rows)
    results_path = out_dir / "results.csv"
    metrics.write_results_csv(all_results, results_path)
    return [str(bench_path), str(results_path), *artifacts]


def run(spec: ExperimentSpec) -> int:
    """Execute a validated spec; returns a process exit code."""
    spec = apply_preset(spec)
    problems = validate(spec)
    if problems:
        for p in problems:
            print(f"spec violation: {p}")
        return 2
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    handlers = {
        "synth": _cmd_synth,
        "preprocess": _cmd_preprocess,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "sweep": _cmd_sweep,
        "augbench": _cmd_augbench,
    }
    artifacts = handlers[spec.command](spec, out_dir)
    _write_manifest(spec, out_dir, artifacts)
    for a in artifacts[:8]:
        print(f"wrote {a}")
    if len(artifacts) > 8:
        print(f"wrote {len(artifacts) - 8} more artifacts (see run_manifest.json)")
    return 0
