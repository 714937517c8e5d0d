"""Command-line surface: corpus synthesis, attacks, evaluation, benchmarks.

Runs are driven by a strict JSON config: every key is checked against the
schema and unknown keys abort before any computation. Exit codes: 0 on
success, 1 for usage or config errors, 2 for I/O errors, 3 when the
optimizer produced a non-finite value.

The only environment override is LATENTSTEER_OUT_DIR, which replaces the
configured output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .attack import AttackConfig, run_e2e, run_utlsa
from .evaluate import (
    BaselineRow,
    build_report,
    eval_asr,
    make_target_bank,
    random_baseline_rows,
    render_report_table,
    report_records,
)
from .bench import MODES, bench_attack, bench_records, render_bench_table
from .features import DB_PER_NAT, NUM_SAMPLES, log_mel
from .model import init_params
from .signal import (
    DEFAULT_PROFILES,
    UnsupportedWavError,
    WavFormatError,
    pad_or_trim,
    read_wav,
    synth_carrier,
    synth_target,
    write_wav,
)
from .text import encode_command, normalize_text
from .weights import WeightsError, load_delta, load_weights, save_delta, save_weights

OUT_DIR_ENV = "LATENTSTEER_OUT_DIR"


class ConfigError(ValueError):
    """Bad usage or configuration; maps to exit code 1."""


_SCHEMA = {
    "attack": {
        "mode": str, "epsilon": float, "iterations": int, "lr": float,
        "beta1": float, "beta2": float, "adam_eps": float, "batch": int,
        "grad_accum": int, "seed": int, "num_samples": int, "log_every": int,
    },
    "model": {"seed": int, "path": str},
    "train_corpus": {"profile": str, "count": int, "seed": int},
    "eval_corpora": [{"name": str, "profile": str, "count": int, "seed": int}],
    "target": {"command": str, "aliases": [str]},
    "bank": {"commands": [str], "tau": (float, str)},
    "baseline": {"enabled": bool, "draws": int, "seed": int},
    "outputs": {"dir": str, "delta": str, "log": str, "report": str, "table": str, "bench": str},
}


def _validate(node, schema, path: str) -> None:
    if isinstance(schema, dict):
        if not isinstance(node, dict):
            raise ConfigError(f"{path or 'config'}: expected an object")
        for key, value in node.items():
            child = f"{path}.{key}" if path else key
            if key not in schema:
                raise ConfigError(f"unknown config key: {child}")
            _validate(value, schema[key], child)
    elif isinstance(schema, list):
        if not isinstance(node, list):
            raise ConfigError(f"{path}: expected a list")
        for i, item in enumerate(node):
            _validate(item, schema[0], f"{path}[{i}]")
    else:
        kinds = schema if isinstance(schema, tuple) else (schema,)
        if isinstance(node, bool) and bool not in kinds:
            raise ConfigError(f"{path}: expected {kinds[0].__name__}, got a boolean")
        if float in kinds:
            kinds = kinds + (int,)
        if not isinstance(node, kinds):
            names = "/".join(k.__name__ for k in kinds)
            raise ConfigError(f"{path}: expected {names}, got {type(node).__name__}")


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    _validate(cfg, _SCHEMA, "")
    return cfg


def _need(cfg: dict, section: str, *keys: str):
    if section not in cfg:
        raise ConfigError(f"missing config section: {section}")
    block = cfg[section]
    for key in keys:
        scope = block if not isinstance(block, list) else None
        if scope is None or key not in scope:
            raise ConfigError(f"missing config key: {section}.{key}")
    return block


def _attack_config(cfg: dict):
    block = dict(cfg.get("attack", {}))
    mode = block.pop("mode", "utlsa")
    if mode not in ("utlsa", "e2e"):
        raise ConfigError(f"attack.mode must be 'utlsa' or 'e2e', got {mode!r}")
    log_every = block.pop("log_every", 1)
    try:
        return AttackConfig(**block), mode, log_every
    except ValueError as exc:
        raise ConfigError(f"attack: {exc}") from exc


def _build_corpus(spec: dict):
    for key in ("profile", "count", "seed"):
        if key not in spec:
            raise ConfigError(f"corpus spec missing key: {key}")
    if spec["profile"] not in DEFAULT_PROFILES:
        raise ConfigError(f"unknown corpus profile: {spec['profile']!r}")
    profile = DEFAULT_PROFILES[spec["profile"]]
    return [synth_carrier(spec["seed"] + i, profile) for i in range(spec["count"])]


def _out_dir(cfg: dict) -> Path:
    configured = cfg.get("outputs", {}).get("dir", ".")
    return Path(os.environ.get(OUT_DIR_ENV, configured))


def _out_path(cfg: dict, key: str, default: str) -> Path:
    base = _out_dir(cfg)
    base.mkdir(parents=True, exist_ok=True)
    return base / cfg.get("outputs", {}).get(key, default)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profile = DEFAULT_PROFILES[args.profile]
    manifest_lines = []
    for i in range(args.count):
        file_seed = args.seed + i
        name = f"{args.profile}_{file_seed}_{i:04d}.wav"
        write_wav(synth_carrier(file_seed, profile), out_dir / name)
        manifest_lines.append(f"{name}\t{file_seed}")
    (out_dir / "manifest.txt").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    print(f"wrote {args.count} carriers + manifest to {out_dir}")
    return 0


def cmd_target(args) -> int:
    write_wav(synth_target(args.command), args.out)
    print(f"wrote target audio for {normalize_text(args.command)!r} to {args.out}")
    return 0


def cmd_init_model(args) -> int:
    cfg = load_config(args.config)
    block = _need(cfg, "model", "seed", "path")
    params = init_params(block["seed"])
    path = _out_dir(cfg) / block["path"]
    path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(params, path)
    print(f"wrote model weights (seed {block['seed']}) to {path}")
    return 0


def _load_model(cfg: dict):
    block = _need(cfg, "model", "path")
    path = _out_dir(cfg) / block["path"]
    if not path.exists():
        raise FileNotFoundError(f"model weights not found: {path}")
    return load_weights(path)


def cmd_attack(args) -> int:
    cfg = load_config(args.config)
    acfg, mode, log_every = _attack_config(cfg)
    enc, dec = _load_model(cfg)
    corpus_spec = _need(cfg, "train_corpus", "profile", "count", "seed")
    corpus = _build_corpus(corpus_spec)
    target_block = _need(cfg, "target", "command")
    command = target_block["command"]

    if mode == "utlsa":
        delta, log = run_utlsa(acfg, corpus, enc, synth_target(command), log_every=log_every)
    else:
        delta, log = run_e2e(acfg, corpus, enc, dec, encode_command(command), log_every=log_every)

    delta_path = _out_path(cfg, "delta", "delta.uw")
    save_delta(delta_path, delta, acfg.epsilon, acfg.seed)
    log_path = _out_path(cfg, "log", "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as f:
        for rec in log:
            f.write(json.dumps({
                "iter": rec.iteration, "loss": rec.loss,
                "linf": rec.linf, "elapsed_s": rec.elapsed_s,
            }, sort_keys=True) + "\n")
    print(f"final loss {log[-1].loss:.6f}  linf {log[-1].linf:.6f}")
    print(f"wrote {delta_path} and {log_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    delta_f32, epsilon, _seed = load_delta(args.delta)
    delta = delta_f32.astype(np.float64)
    enc, _dec = _load_model(cfg)
    corpora_spec = cfg.get("eval_corpora")
    if not corpora_spec:
        raise ConfigError("missing config section: eval_corpora")
    corpora = [(spec.get("name", spec["profile"]), _build_corpus(spec)) for spec in corpora_spec]
    target_block = _need(cfg, "target", "command")
    command = target_block["command"]
    aliases = frozenset(normalize_text(a) for a in target_block.get("aliases", []))
    bank_block = _need(cfg, "bank", "commands")
    commands = bank_block["commands"]
    if normalize_text(command) not in {normalize_text(c) for c in commands}:
        raise ConfigError("target.command must be one of bank.commands")
    tau = bank_block.get("tau", "calibrate")
    if isinstance(tau, str):
        if tau != "calibrate":
            raise ConfigError(f"bank.tau must be a number or 'calibrate', got {tau!r}")
        benign = [x for _, corpus in corpora for x in corpus]
        bank = make_target_bank(enc, commands, benign_corpus=benign)
    else:
        bank = make_target_bank(enc, commands, tau=float(tau))

    rows = [eval_asr(delta, corpus, command, bank, enc, aliases, name=name)
            for name, corpus in corpora]
    baseline_rows = []
    draws = 0
    baseline_block = cfg.get("baseline", {})
    if baseline_block.get("enabled", False):
        draws = baseline_block.get("draws", 5)
        stats = random_baseline_rows(
            draws, epsilon, corpora, command, bank, enc,
            baseline_block.get("seed", 0), aliases,
        )
        baseline_rows = [BaselineRow(name, *stats[name]) for name, _ in corpora]
    report = build_report(rows, baseline_rows, draws)

    report_path = _out_path(cfg, "report", "report.jsonl")
    report_path.write_text(report_records(report), encoding="utf-8")
    table = render_report_table(report)
    table_path = _out_path(cfg, "table", "report.txt")
    table_path.write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"wrote {report_path} and {table_path}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    acfg, _mode, _log_every = _attack_config(cfg)
    params = _load_model(cfg)
    corpus = _build_corpus(_need(cfg, "train_corpus", "profile", "count", "seed"))
    command = _need(cfg, "target", "command")["command"]

    modes = list(MODES) if args.mode == "both" else [args.mode]
    reports = [bench_attack(m, args.iters, acfg, corpus, params, command, threads=args.threads)
               for m in modes]
    bench_path = _out_path(cfg, "bench", "bench.jsonl")
    bench_path.write_text(bench_records(*reports), encoding="utf-8")
    for r in reports:
        print(f"{r.mode}: {r.iters_per_second:.2f} iters/s, "
              f"peak {r.peak_bytes_estimate / 2**20:.2f} MB")
    if len(reports) == 2:
        by_mode = {r.mode: r for r in reports}
        print(render_bench_table(by_mode["encoder_only"], by_mode["end_to_end"]), end="")
    print(f"wrote {bench_path}")
    return 0


def cmd_spectro(args) -> int:
    carrier = np.asarray(pad_or_trim(read_wav(args.wav), NUM_SAMPLES), dtype=np.float64)
    delta = pad_or_trim(load_delta(args.delta)[0].astype(np.float64), NUM_SAMPLES)
    grids = {
        "carrier": log_mel(carrier) * DB_PER_NAT,
        "perturbation": log_mel(delta) * DB_PER_NAT,
        "adversarial": log_mel(carrier + delta) * DB_PER_NAT,
    }
    for label, grid in grids.items():
        np.savetxt(f"{args.out_prefix}_{label}.csv", grid, fmt="%.6f", delimiter=",")
    diff = float(np.max(np.abs(grids["adversarial"] - grids["carrier"])))
    print(
        f"mean_power_db carrier={grids['carrier'].mean():.3f} "
        f"perturbation={grids['perturbation'].mean():.3f} "
        f"adversarial={grids['adversarial'].mean():.3f} "
        f"max_abs_diff_db={diff:.3f}"
    )
    return 0


def cmd_rand_delta(args) -> int:
    from .attack import random_universal

    delta = random_universal(args.seed, args.epsilon, args.samples)
    save_delta(args.out, delta, args.epsilon, args.seed)
    print(f"wrote random delta (seed {args.seed}, epsilon {args.epsilon}) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors map to exit code 1
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentsteer",
                     description="Universal targeted perturbations against a frozen audio encoder")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a deterministic carrier corpus as WAV files")
    p.add_argument("--profile", required=True, choices=sorted(DEFAULT_PROFILES))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("target", help="write the signature audio for a command")
    p.add_argument("--command", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_target)

    p = sub.add_parser("init-model", help="initialize and save the frozen model weights")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("attack", help="learn a universal perturbation (mode from config)")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("rand-delta", help="draw a random uniform perturbation")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--samples", type=int, default=NUM_SAMPLES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rand_delta)

    p = sub.add_parser("eval", help="evaluate a perturbation over the configured corpora")
    p.add_argument("--delta", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the encoder-only and end-to-end routes")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=list(MODES) + ["both"], default="both")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS thread cap applied to both modes alike")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("spectro", help="dump dB spectrogram grids for carrier/delta/mix")
    p.add_argument("--wav", required=True)
    p.add_argument("--delta", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_spectro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (WavFormatError, UnsupportedWavError, WeightsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
