"""Command-line entry point.

One spec drives every command; it can come from a JSON config file, the
enumerated flags below, and generic dotted overrides like
``--train.max_epochs=20`` or ``--synth.snr_db=0`` (flags win over the file,
dotted overrides win over flags).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiment import ExperimentSpec, run, spec_from_dict, spec_to_dict

_FLAG_PATHS = {
    "dataset": ("dataset",),
    "corpus": ("corpus",),
    "text_emb": ("text_emb",),
    "speech_emb": ("speech_emb",),
    "cv": ("cv",),
    "task": ("task",),
    "approach": ("approach",),
    "seed": ("seed",),
    "repeats": ("repeats",),
    "folds": ("folds",),
    "out": ("out",),
    "preset": ("preset",),
    "results": ("results",),
    "energy_map": ("energy_map",),
    "sweep_param": ("sweep_param",),
    "tau": ("train", "loss", "tau"),
    "lambda_t": ("train", "loss", "lambda_t"),
    "lambda_s": ("train", "loss", "lambda_s"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "lr"),
    "weight_decay": ("train", "weight_decay"),
    "max_epochs": ("train", "max_epochs"),
    "patience": ("train", "patience"),
    "noise_domain": ("train", "noise_domain"),
    "noise": ("train", "augmentation", "kind"),
    "noise_amplitude": ("train", "augmentation", "amplitude"),
    "noise_ps": ("train", "augmentation", "p_s"),
    "noise_pp": ("train", "augmentation", "p_p"),
    "copies": ("train", "augmentation", "copies"),
    "subjects": ("synth", "n_subjects"),
    "blocks": ("synth", "n_blocks"),
    "channels": ("synth", "channels"),
    "snr_db": ("synth", "snr_db"),
    "mode": ("synth", "template_mode"),
    "coupling": ("synth", "embedding_coupling"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masd",
        description="Synthesize, preprocess, train, and evaluate word-decoding experiments.",
    )
    parser.add_argument("command", choices=["synth", "preprocess", "train", "eval", "sweep", "augbench"])
    parser.add_argument("--config", help="JSON spec file; flags override its fields")
    parser.add_argument("--dataset", help="dataset directory")
    parser.add_argument("--corpus", help="corpus CSV (default: bundled 48-word table)")
    parser.add_argument("--text-emb", dest="text_emb", help="text embedding table JSON")
    parser.add_argument("--speech-emb", dest="speech_emb", help="speech embedding table JSON")
    parser.add_argument("--cv", choices=["within", "cross"])
    parser.add_argument("--task", choices=["word", "tone", "initial", "initial8", "finalclass", "finalfull"])
    parser.add_argument("--approach", choices=["auto", "single", "masd"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--repeats", type=int)
    parser.add_argument("--folds", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--preset", choices=["quick"])
    parser.add_argument("--results", help="results CSV to aggregate (eval)")
    parser.add_argument("--energy-map", dest="energy_map", choices=["word", "time"])
    parser.add_argument("--tau", type=float)
    parser.add_argument("--lambda-t", dest="lambda_t", type=float)
    parser.add_argument("--lambda-s", dest="lambda_s", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--weight-decay", dest="weight_decay", type=float)
    parser.add_argument("--max-epochs", dest="max_epochs", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--noise", choices=["gaussian", "poisson", "pink", "saltpepper"])
    parser.add_argument("--noise-domain", dest="noise_domain", choices=["time", "freq"])
    parser.add_argument("--noise-amplitude", dest="noise_amplitude", type=float)
    parser.add_argument("--noise-ps", dest="noise_ps", type=float)
    parser.add_argument("--noise-pp", dest="noise_pp", type=float)
    parser.add_argument("--copies", type=int)
    parser.add_argument("--subjects", type=int)
    parser.add_argument("--blocks", type=int)
    parser.add_argument("--channels", type=int)
    parser.add_argument("--snr-db", dest="snr_db", type=float)
    parser.add_argument("--mode", choices=["separable", "classstructured", "randomlabel"])
    parser.add_argument("--coupling", type=float)
    parser.add_argument("--sweep-param", dest="sweep_param", choices=["lambda_t", "lambda_s"])
    parser.add_argument("--sweep-grid", dest="sweep_grid", help="comma-separated values, e.g. 0,0.1,1,10")
    parser.add_argument("--no-checkpoints", action="store_true", help="skip checkpoint files")
    return parser


def _deep_update(base: dict, new: dict) -> dict:
    for key, value in new.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _set_path(d: dict, path: tuple[str, ...], value) -> None:
    node = d
    for key in path[:-1]:
        if node.get(key) is None:
            node[key] = {}
        node = node[key]
    node[path[-1]] = value


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_dotted(d: dict, extras: list[str]) -> None:
    for raw in extras:
        if not raw.startswith("--") or "=" not in raw:
            raise SystemExit(f"unrecognized argument {raw!r} (overrides look like --train.lr=0.001)")
        key, _, value = raw[2:].partition("=")
        _set_path(d, tuple(key.split(".")), _coerce(value))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)

    spec_dict = spec_to_dict(ExperimentSpec())
    if args.config:
        file_dict = json.loads(Path(args.config).read_text(encoding="utf-8"))
        _deep_update(spec_dict, file_dict)
    for flag, path in _FLAG_PATHS.items():
        value = getattr(args, flag)
        if value is not None:
            _set_path(spec_dict, path, value)
    if args.sweep_grid is not None:
        spec_dict["sweep_grid"] = [float(v) for v in args.sweep_grid.split(",")]
    if args.no_checkpoints:
        spec_dict["save_checkpoints"] = False
    _apply_dotted(spec_dict, extras)
    spec_dict["command"] = args.command

    try:
        spec = spec_from_dict(spec_dict)
        return run(spec)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
