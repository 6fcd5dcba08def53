"""Command-line entry point: ``sparcl-kit <command> [options]``.

Exit codes: 0 ok, 1 configuration or input error, 2 I/O or file-format
error, 3 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import math
import os
import sys
import time
import typing

import numpy as np

from . import __version__
from .errors import (
    ChecksumMismatch,
    CorruptHeader,
    DivergenceDetected,
    InvalidParams,
    SparclError,
)
from .geninject import inject_image_features, read_sequence, write_sequence
from .losses import MARGIN_MODES, LossConfig, adaptive_margin
from .toyworld import World, WorldConfig, write_dataset
from .trainer import LOG_FIELDS, TrainConfig, ablate, thread_budget, toy_loss_config, train_and_evaluate

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3
PLOT_STEP = 1e-4

_SECTIONS = {"world": WorldConfig, "train": TrainConfig, "loss": LossConfig}
_NESTED = {"world", "loss"}


class ConfigError(SparclError):
    """Malformed or unknown entry in a run configuration file."""


# -- config ----------------------------------------------------------------


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.name not in _NESTED}


def _coerce(section: str, key: str, raw: str, kind):
    text = raw.strip()
    args = typing.get_args(kind)
    if type(None) in args:
        if text.lower() in ("", "none"):
            return None
        kind = next(a for a in args if a is not type(None))
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def load_config(path: str | None) -> TrainConfig:
    """Parse an INI run configuration with optional ``[world]``, ``[train]`` and ``[loss]`` sections.

    Unknown sections and keys are rejected; omitted keys keep the trainer's
    defaults (toy-scale loss settings, not the LossConfig class defaults).
    """
    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case so typos are reported verbatim
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            types = _field_types(_SECTIONS[section])
            for key, raw in parser.items(section):
                if key not in types:
                    raise ConfigError(f"unknown config key {key!r} in [{section}]")
                values[section][key] = _coerce(section, key, raw, types[key])
    world = WorldConfig(**values["world"])
    loss = toy_loss_config().replace(**values["loss"])
    return TrainConfig(**values["train"], world=world, loss=loss)


# -- output helpers ----------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) if c in row else "" for c in columns])


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path!r} is not writable")
    return path


def _params_payload(params) -> dict:
    # float repr round-trips exactly, so this file is a faithful checkpoint
    return {
        "W_img": {"shape": list(params.W_img.shape), "data": params.W_img.ravel().tolist()},
        "W_txt": {"shape": list(params.W_txt.shape), "data": params.W_txt.ravel().tolist()},
    }


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        out = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"{flag}: expected comma-separated integers, got {text!r}") from None
    if not out:
        raise ConfigError(f"{flag}: empty list")
    return out


def _parse_modes(text: str) -> list[str]:
    modes = [tok.strip() for tok in text.split(",") if tok.strip()]
    if not modes:
        raise ConfigError("--modes: empty list")
    for mode in modes:
        if mode not in MARGIN_MODES:
            raise ConfigError(f"--modes: unknown margin mode {mode!r}")
    return modes


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    world_cfg = cfg.world if args.seed is None else dataclasses.replace(cfg.world, seed=args.seed)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    meta = write_dataset(args.out, World(world_cfg), args.count)
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = _prepare_out_dir(args.out)
    start = time.perf_counter()
    params, log = train_and_evaluate(cfg)
    elapsed = time.perf_counter() - start

    _write_csv(os.path.join(out, "metrics.csv"), list(LOG_FIELDS), log.records)
    mar_img = [r["loss_mar_img"] for r in log.records]
    mar_txt = [r["loss_mar_txt"] for r in log.records]
    results = {
        "accuracy": log.accuracy,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "steps": len(log.records),
        "final": log.records[-1] if log.records else None,
        "loss_mar_img_max": max(mar_img, default=0.0),
        "loss_mar_txt_max": max(mar_txt, default=0.0),
    }
    _write_json(os.path.join(out, "results.json"), results)
    _write_json(os.path.join(out, "params.json"), _params_payload(params))
    # timing lives apart from results.json so reruns stay byte-identical
    _write_json(os.path.join(out, "timing.json"), {"wall_time_s": elapsed})
    print(json.dumps({"accuracy": log.accuracy, "out": out}, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    modes = _parse_modes(args.modes)
    seeds = _parse_int_list(args.seeds, "--seeds")
    out = _prepare_out_dir(args.out)
    rows = ablate(cfg, modes, seeds, workers=thread_budget())
    columns: list[str] = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    _write_csv(os.path.join(out, "ablation.csv"), columns, rows)
    summary = {r["mode"]: r["acc_overall_mean"] for r in rows if r["seed"] == "summary"}
    print(json.dumps({"overall_mean": summary, "out": out}, sort_keys=True))
    return EXIT_OK


def margin_curve(m0: float, beta: float, gamma: float) -> list[dict]:
    """Adaptive margin and hinge value on a 1e-4 grid over [beta - 2*m0, 3*m0]."""
    if not (math.isfinite(m0) and math.isfinite(beta) and math.isfinite(gamma)):
        raise InvalidParams("margin parameters must be finite")
    if not beta < 0 < m0:
        raise InvalidParams(f"need beta < 0 < m0, got beta={beta}, m0={m0}")
    if gamma < 0:
        raise InvalidParams(f"gamma must be >= 0, got {gamma}")
    cfg = LossConfig(m0=m0, beta=beta, gamma=gamma, margin_mode="adaptive")
    # integer grid keeps d = 0 exact
    lo = math.ceil(round((beta - 2 * m0) / PLOT_STEP, 6))
    hi = math.floor(round(3 * m0 / PLOT_STEP, 6))
    d = np.arange(lo, hi + 1) / (1.0 / PLOT_STEP)
    m = adaptive_margin(d, cfg)
    hinge = np.maximum(m - d, 0.0)
    return [{"d": a, "m_adaptive": b, "hinge_value": c} for a, b, c in zip(d, m, hinge)]


def cmd_margin_plot(args) -> int:
    rows = margin_curve(args.m0, args.beta, args.gamma)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(args.out, ["d", "m_adaptive", "hinge_value"], rows)
    print(json.dumps({"rows": len(rows), "out": args.out}))
    return EXIT_OK


def cmd_inject_demo(args) -> int:
    seq = read_sequence(args.sequence)
    image = read_sequence(args.image_embedding)
    if image.length != 1:
        raise InvalidParams(f"image-embedding file must hold one row, found {image.length}")
    out = inject_image_features(seq, image.rows[0])
    write_sequence(out, args.out)
    print(json.dumps({"k": seq.eos_index, "L": seq.length, "replaced": seq.length - seq.eos_index}))
    return EXIT_OK


# -- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # bad flags are configuration errors, not I/O errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparcl-kit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a toy dataset file")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, help="overrides the world seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train and evaluate one run")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="overrides the training seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="margin-mode x seed grid")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--modes", default="none,fixed,adaptive")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("margin-plot", help="export the adaptive margin curve")
    defaults = LossConfig()
    p.add_argument("--m0", type=float, default=defaults.m0)
    p.add_argument("--beta", type=float, default=defaults.beta)
    p.add_argument("--gamma", type=float, default=defaults.gamma)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_margin_plot)

    p = sub.add_parser("inject-demo", help="replace post-EOS rows with an image embedding")
    p.add_argument("sequence")
    p.add_argument("image_embedding")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inject_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceDetected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CorruptHeader, ChecksumMismatch, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SparclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
