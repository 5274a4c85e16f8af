"""``acoustic-ssm`` command line.

Every command accepts ``--config FILE``, ``--seed N`` and dotted overrides
such as ``--contrastive.method=augmentations``; overrides win over the file.
Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from acoustic_ssm import config as config_mod
from acoustic_ssm.audio import build_groups, read_manifest, write_manifest
from acoustic_ssm.errors import AcousticSSMError, ConfigError, DataError, NumericError

log = logging.getLogger("acoustic_ssm")

GRAD_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--seed", type=int, help="global seed override")
    p.add_argument("--show-config", action="store_true", help="print the resolved config")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    epilog = ("config keys (override with --section.key=value):\n  "
              + config_mod.describe_keys().replace("\n", "\n  "))
    parser = _Parser(prog="acoustic-ssm", description=__doc__.split("\n")[0],
                     epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pretrain", help="contrastive pre-training -> checkpoint",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--group", help="pre-train on this group's clips only")
    p.add_argument("--metrics", type=Path, help="append per-epoch metrics CSV")
    p.add_argument("--resume", type=Path, help="resume from checkpoint")

    p = sub.add_parser("finetune-eval", help="fine-tune on a group's support set, score queries",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--ckpt", type=Path, help="pre-trained checkpoint")
    p.add_argument("--group", required=True)
    p.add_argument("--init", choices=("pretrained", "random"), default="pretrained")
    p.add_argument("--freeze-embedder", action="store_true")
    p.add_argument("--report", type=Path, help="append group,accuracy to this CSV")
    p.add_argument("--out-ckpt", type=Path, help="save fine-tuned embedder + head")

    p = sub.add_parser("protocol", help="pretrain/finetune/evaluate every group",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--init", choices=("pretrained", "random"), default="pretrained")
    p.add_argument("--report", type=Path, help="write group,accuracy CSV with AA row")

    p = sub.add_parser("extract", help="dump a stacked spectrogram",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--input", type=Path, required=True, help="WAV file")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("make-synth", help="write a synthetic call-type corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--clips", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=int, default=4000)
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("grad-check", help="finite-difference check of the tiny model")
    p.add_argument("--probes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=GRAD_TOL)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("split", help="emit the resolved group split CSV",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _split_overrides(extra: list[str]) -> list[str]:
    out, i = [], 0
    while i < len(extra):
        item = extra[i]
        if not item.startswith("--") or "." not in item.split("=", 1)[0]:
            raise UsageError(f"unrecognized argument {item!r}")
        if "=" in item:
            out.append(item[2:])
            i += 1
        elif i + 1 < len(extra):
            out.append(f"{item[2:]}={extra[i + 1]}")
            i += 2
        else:
            raise UsageError(f"missing value for {item}")
    return out


def resolve_config(args, overrides: list[str]) -> config_mod.RunConfig:
    cfg = config_mod.RunConfig()
    if getattr(args, "config", None) is not None:
        if not args.config.exists():
            raise ConfigError(f"config file not found: {args.config}")
        cfg = config_mod.load_config(args.config)
    cfg = config_mod.apply_overrides(cfg, overrides)
    if getattr(args, "seed", None) is not None:
        cfg = config_mod.apply_overrides(cfg, [f"seed={args.seed}"])
    if getattr(args, "show_config", False):
        print(config_mod.dumps(cfg), end="")
    return cfg


def _manifest(cfg):
    if not cfg.data.manifest:
        raise ConfigError("data.manifest is not set")
    path = Path(cfg.data.manifest)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    return read_manifest(path)


def _find_split(splits, group):
    for s in splits:
        if s.group == group:
            return s
    raise DataError(f"unknown group {group!r}; available: {[s.group for s in splits]}")


def cmd_pretrain(args, cfg) -> int:
    from acoustic_ssm import pipeline
    from acoustic_ssm.trainer import load_checkpoint, save_checkpoint

    splits, loader = pipeline.prepare(_manifest(cfg), cfg)
    chosen = [_find_split(splits, args.group)] if args.group else splits
    clips = [loader(e) for s in chosen for e in s.pretrain]
    resume = load_checkpoint(args.resume) if args.resume else None
    result = pipeline.pretrain(clips, cfg, ckpt_path=args.out, metrics_path=args.metrics,
                               resume=resume)
    save_checkpoint(args.out, result.checkpoint)
    last = f"{result.losses[-1]:.5f}" if result.losses else "n/a"
    print(f"pretrained {len(clips)} clips for {result.checkpoint.epoch} epochs; "
          f"final loss {last}; checkpoint {args.out}")
    return 0


def cmd_finetune_eval(args, cfg) -> int:
    from acoustic_ssm import pipeline
    from acoustic_ssm.trainer import (
        Checkpoint,
        build_embedder,
        load_checkpoint,
        module_arrays,
        save_checkpoint,
    )

    if args.freeze_embedder:
        cfg = config_mod.apply_overrides(cfg, ["fewshot.freeze_embedder=true"])
    splits, loader = pipeline.prepare(_manifest(cfg), cfg)
    split = _find_split(splits, args.group)
    ep = pipeline.build_episode(split, loader.fixed(cfg.data.clip_len), cfg.fewshot.n_way,
                                cfg.fewshot.shots)
    if args.init == "random":
        embedder = build_embedder(cfg.embedder_config(), cfg.seed)
    else:
        if args.ckpt is None:
            raise UsageError("--ckpt is required unless --init random")
        if not args.ckpt.exists():
            raise DataError(f"checkpoint not found: {args.ckpt}")
        embedder = pipeline.embedder_from_checkpoint(load_checkpoint(args.ckpt), cfg)
    metrics = pipeline.finetune_eval(embedder, ep, cfg)
    print("group,accuracy")
    print(f"{split.group},{metrics['accuracy']:.6f}")
    if args.report:
        new = not args.report.exists()
        with open(args.report, "a") as fh:
            if new:
                fh.write("group,accuracy\n")
            fh.write(f"{split.group},{metrics['accuracy']!r}\n")
    if args.out_ckpt:
        arrays = module_arrays("embedder", embedder)
        arrays.update(module_arrays("head", metrics["head"]))
        save_checkpoint(args.out_ckpt, Checkpoint(arrays, cfg.to_dict(), 0, {"seed": cfg.seed},
                                                  {"accuracy": metrics["accuracy"]}))
    return 0


def cmd_protocol(args, cfg) -> int:
    from acoustic_ssm import pipeline
    from acoustic_ssm.fewshot import write_report

    report = pipeline.run_protocol(_manifest(cfg), cfg, init=args.init)
    print(report.table())
    if args.report:
        write_report(args.report, report)
    return 0


def cmd_extract(args, cfg) -> int:
    from acoustic_ssm.audio import crop_or_pad, load_wav, resample
    from acoustic_ssm.features import stack_channels, write_features

    if not args.input.exists():
        raise DataError(f"input not found: {args.input}")
    w = crop_or_pad(resample(load_wav(args.input), cfg.data.sample_rate), cfg.data.clip_len)
    fcfg = cfg.feature_config()
    data = stack_channels(w, fcfg)
    write_features(args.out, data, fcfg)
    print(f"wrote {data.shape} to {args.out}")
    return 0


def cmd_make_synth(args) -> int:
    from acoustic_ssm.synth import make_synth

    try:
        manifest = make_synth(args.out, args.classes, args.clips, args.seed, args.rate, args.seconds)
    except OSError as exc:
        raise DataError(f"cannot write to {args.out}: {exc}") from exc
    print(f"wrote {args.classes * args.clips} clips and {manifest}")
    return 0


def cmd_grad_check(args) -> int:
    from acoustic_ssm.trainer import tiny_model_gradcheck

    report = tiny_model_gradcheck(probe_count=args.probes, seed=args.seed)
    worst = max(report.values())
    for name, err in report.items():
        log.debug("%s %.3e", name, err)
    print(f"max relative error {worst:.3e} over {len(report)} arrays (tol {args.tol:g})")
    if worst >= args.tol:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {args.tol:g}")
    return 0


def cmd_split(args, cfg) -> int:
    splits = build_groups(_manifest(cfg), cfg.fewshot.classes_per_group, cfg.fewshot.shots, cfg.seed)
    write_manifest(args.out, [e for s in splits for e in s.entries()])
    print(f"wrote {len(splits)} groups to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "make-synth":
            if extra:
                raise UsageError(f"unrecognized arguments {extra}")
            return cmd_make_synth(args)
        if args.command == "grad-check":
            if extra:
                raise UsageError(f"unrecognized arguments {extra}")
            return cmd_grad_check(args)
        cfg = resolve_config(args, _split_overrides(extra))
        handler = {
            "pretrain": cmd_pretrain,
            "finetune-eval": cmd_finetune_eval,
            "protocol": cmd_protocol,
            "extract": cmd_extract,
            "split": cmd_split,
        }[args.command]
        return handler(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AcousticSSMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
