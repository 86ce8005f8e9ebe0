"""Command-line entry point for reproducible experiments.

Commands: ``generate`` (synthetic dataset), ``train`` (training loop),
``spectrum`` (eigenmode CSV for one clip), ``probe`` (frozen-encoder
evaluation appended to a results CSV), ``report`` (summarize a results CSV).

Exit codes: 0 success, 2 usage/validation errors, 3 numerical failure.
The environment variable ``BOLD_DI_SEED`` overrides the config-file seed;
an explicit ``--seed`` flag overrides both.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import configio
from .encoder import embed_frames, identity_params, load_checkpoint
from .errors import InvalidInputError, NumericalFailureError
from .koopman import estimate_koopman
from .probes import (
    ProbeReport,
    append_report,
    linear_probe,
    linear_probe_full,
    order_discrimination_probe,
    static_degradation_probe,
)
from .stratify import stratify
from .synth import GeneratorConfig, generate_dataset, read_dataset, write_dataset
from .trainer import TrainerConfig, train

_HYPERGRAD_FLAGS = {"fd": "finite_difference", "first": "first_order"}
PROBE_CHOICES = ("linear", "order", "static")


def _seed_override(args) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("BOLD_DI_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InvalidInputError(f"BOLD_DI_SEED must be an integer, got {env!r}") from exc
    return None


def cmd_generate(args) -> int:
    if args.config is not None:
        config = GeneratorConfig.from_text(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = GeneratorConfig()
    seed = _seed_override(args)
    if seed is not None:
        config = replace(config, seed=seed)
    config.validate()
    clips = generate_dataset(config)
    write_dataset(args.out, clips, config)
    labels = sorted({c.label for c in clips})
    blocks = clips[0].ground_truth.blocks if clips[0].ground_truth else ()
    kinds = ", ".join(f"{b.kind}[{b.size}]" for b in blocks)
    print(f"wrote {len(clips)} clips to {args.out}")
    print(f"classes: {len(labels)} ({config.label_mode}); latent blocks: {kinds}")
    print(f"seed: {config.seed} config_hash: {configio.config_hash(config.to_text())}")
    return 0


def cmd_train(args) -> int:
    if args.config is not None:
        config = TrainerConfig.from_text(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = TrainerConfig()
    overrides = {}
    if args.variant is not None:
        overrides["variant"] = args.variant
    if args.bold_di is not None:
        overrides["bold_di"] = args.bold_di == "on"
    if args.single_level:
        overrides["single_level"] = True
    if args.hypergrad is not None:
        overrides["hypergrad"] = _HYPERGRAD_FLAGS[args.hypergrad]
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.max_steps is not None:
        overrides["max_steps"] = args.max_steps
    seed = _seed_override(args)
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        config = replace(config, **overrides)
    config.validate()

    clips, _ = read_dataset(args.dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trainer_config.txt").write_text(
        config.to_text() + f"config_hash = {configio.config_hash(config.to_text())}\n",
        encoding="utf-8",
    )
    state = train(config, clips, out_dir=out_dir)
    last = state.metrics[-1] if state.metrics else {}
    print(f"finished {state.step} steps; metrics: {out_dir / 'metrics.csv'}")
    if "total" in last and last.get("total") is not None:
        print(f"final total loss: {last['total']:.6f}")
    return 0


def cmd_spectrum(args) -> int:
    clips, data_config = read_dataset(args.dataset)
    matches = [c for c in clips if c.video_id == args.clip_id]
    if not matches:
        raise InvalidInputError(f"clip id {args.clip_id} not found in {args.dataset}")
    clip = matches[0]

    if args.identity_encoder:
        params = identity_params(clip.obs_dim)
        seed = data_config.seed
        stamp = configio.config_hash(data_config.to_text())
    elif args.checkpoint is not None:
        ckpt = load_checkpoint(args.checkpoint)
        params = ckpt.params
        seed = ckpt.seed
        stamp = ckpt.config_hash
    else:
        raise InvalidInputError("spectrum needs --checkpoint or --identity-encoder")

    u = embed_frames(params, clip.frames)
    estimate = estimate_koopman(u)
    spectrum = stratify(estimate, args.sigma, args.omega, args.rule)
    lines = [f"# seed={seed} config_hash={stamp}", "index,re,im,magnitude,argument,kind"]
    for i, mode in enumerate(spectrum.modes):
        lines.append(
            f"{i},{repr(mode.value.real)},{repr(mode.value.imag)},"
            f"{repr(mode.magnitude)},{repr(mode.argument)},{mode.kind}"
        )
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    counts = {}
    for mode in spectrum.modes:
        counts[mode.kind] = counts.get(mode.kind, 0) + 1
    print(f"wrote {len(spectrum.modes)} modes to {args.out}: {counts}")
    return 0


def cmd_probe(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    clips, _ = read_dataset(args.dataset)
    seed = _seed_override(args)
    seed = ckpt.seed if seed is None else seed
    checkpoint_id = Path(args.checkpoint).name

    if args.probe == "linear":
        report = linear_probe(ckpt.params, clips, seed=seed, checkpoint_id=checkpoint_id)
        append_report(args.results, report)
        reports = [report]
    elif args.probe == "order":
        report = order_discrimination_probe(
            ckpt.params, clips, seed=seed, checkpoint_id=checkpoint_id
        )
        append_report(args.results, report)
        reports = [report]
    else:  # static
        _, classifier, test_clips = linear_probe_full(
            ckpt.params, clips, seed=seed, checkpoint_id=checkpoint_id
        )
        acc_real, acc_static = static_degradation_probe(ckpt.params, classifier, test_clips)
        reports = [
            ProbeReport("static_real", acc_real, len(test_clips), seed, checkpoint_id),
            ProbeReport("static_static", acc_static, len(test_clips), seed, checkpoint_id),
        ]
        for report in reports:
            append_report(args.results, report)
    for report in reports:
        print(
            f"{report.probe}: accuracy {report.accuracy:.4f} "
            f"(n={report.n_samples}, seed={report.seed}) -> {args.results}"
        )
    return 0


def cmd_report(args) -> int:
    path = Path(args.results)
    if not path.exists():
        raise InvalidInputError(f"results file {path} does not exist")
    rows = [line.strip().split(",") for line in path.read_text(encoding="utf-8").splitlines()]
    if not rows or rows[0] != ["probe", "checkpoint", "accuracy", "n", "seed"]:
        raise InvalidInputError(f"{path} is not a probe results CSV")
    grouped: dict[tuple[str, str], list[float]] = {}
    for row in rows[1:]:
        if len(row) != 5:
            continue
        grouped.setdefault((row[0], row[1]), []).append(float(row[2]))
    print(f"{'probe':<14} {'checkpoint':<24} {'runs':>4} {'mean acc':>9}")
    for (probe, ckpt), accs in sorted(grouped.items()):
        print(f"{probe:<14} {ckpt:<24} {len(accs):>4} {np.mean(accs):>9.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bold-di",
        description="Synthetic-benchmark toolkit for decoupled static/dynamic "
        "self-supervised representation learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic clip dataset")
    p.add_argument("--config", help="generator config file (flat key = value)")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="trainer config file")
    p.add_argument("--variant", choices=("simclr", "byol", "moco"))
    p.add_argument("--bold-di", dest="bold_di", choices=("on", "off"))
    p.add_argument("--single-level", dest="single_level", action="store_true")
    p.add_argument("--hypergrad", choices=tuple(_HYPERGRAD_FLAGS))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("spectrum", help="write one clip's eigenmode CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--clip-id", dest="clip_id", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--identity-encoder", dest="identity_encoder", action="store_true")
    p.add_argument("--sigma", type=float, default=0.9)
    p.add_argument("--omega", type=float, default=0.1)
    p.add_argument("--rule", choices=("complement", "conjunction"), default="complement")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("probe", help="evaluate a frozen encoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--probe", choices=PROBE_CHOICES, required=True)
    p.add_argument("--results", required=True, help="results CSV (appended)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="summarize a probe results CSV")
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
