"""Command-line entry point: ``facedyn <command> [options]``.

Every PipelineConfig field has a matching ``--flag``; nested synthetic and
augmentation settings use ``--set synthetic.subjects=6`` style overrides.
Precedence: defaults < ``--config`` file < flags < ``--set``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, fields
from pathlib import Path

from . import __version__
from .errors import FaceDynError, StageError
from .pipeline import PipelineConfig, replay, run_command

COMMANDS = {
    "synth": "write the synthetic dataset as mesh files",
    "preprocess": "write rotated, cropped view sequences",
    "render": "write per-frame texture/depth/E-DPI/CD images",
    "cdi": "write cross-domain dynamic images per example and view",
    "augment": "write clip provenance manifests",
    "train": "fit one model on all examples",
    "eval": "k-fold cross-validated experiment with report",
    "ablate": "compare cross-domain on/off and augmentation levels",
}

# Fields whose flags take JSON values rather than scalars.
JSON_FIELDS = {"synthetic", "augmentation", "angles", "fusion_weights"}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="JSON config file")
    g.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a field; dotted keys reach nested dicts (JSON values)")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        default = f.default if f.default is not MISSING else f.default_factory()
        if f.name in JSON_FIELDS:
            g.add_argument(flag, dest=f.name, type=_parse_value, default=None, metavar="JSON")
        elif isinstance(default, bool):
            g.add_argument(flag, dest=f.name, type=_bool, default=None, metavar="BOOL")
        elif isinstance(default, int):
            g.add_argument(flag, dest=f.name, type=int, default=None)
        elif isinstance(default, float):
            g.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            g.add_argument(flag, dest=f.name, default=None)
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facedyn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"facedyn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        if name == "ablate":
            p.add_argument("--cd", dest="cd_modes", default="on,off",
                           help="comma list of cross-domain modes (on/off)")
            p.add_argument("--levels", default="original",
                           help="comma list of augmentation levels, or 'table2' for all four")
    p = sub.add_parser("replay", help="re-run a manifest and compare artifact hashes")
    p.add_argument("manifest", type=Path)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--cache-dir", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_override(d: dict, item: str) -> None:
    if "=" not in item:
        raise FaceDynError(f"--set expects KEY=VALUE, got {item!r}")
    key, value = item.split("=", 1)
    parts = key.split(".")
    target = d
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise FaceDynError(f"--set {key}: {part!r} is not a nested table")
    target[parts[-1]] = _parse_value(value)


def config_from_args(args) -> PipelineConfig:
    d = {}
    if args.config is not None:
        d.update(json.loads(args.config.read_text(encoding="utf-8")))
    for f in fields(PipelineConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            d[f.name] = value
    for item in args.overrides:
        _apply_override(d, item)
    return PipelineConfig.from_dict(d)


def _ablation_settings(args) -> list[dict]:
    from .pipeline import LEVELS

    modes = []
    for m in args.cd_modes.split(","):
        modes.append(_bool(m.strip()))
    levels = list(LEVELS) if args.levels == "table2" else [x.strip() for x in args.levels.split(",")]
    return [{"cross_domain": cd, "augmentation_level": lv} for cd in modes for lv in levels]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            diffs = replay(args.manifest, args.output_dir, args.cache_dir)
            if diffs:
                print(f"replay differs in {len(diffs)} file(s):")
                for d in diffs:
                    print(f"  {d}")
                return 1
            print("replay identical")
            return 0
        config = config_from_args(args)
        settings = _ablation_settings(args) if args.command == "ablate" else None
        manifest = run_command(args.command, config, settings)
    except StageError as exc:
        print(f"facedyn: error in {exc}", file=sys.stderr)
        return 2
    except (FaceDynError, OSError, ValueError) as exc:
        print(f"facedyn: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    root = Path(manifest.root)
    print(f"{args.command}: wrote {root / 'manifest.json'}")
    report = root / "report.json"
    if args.command == "eval" and report.exists():
        r = json.loads(report.read_text(encoding="utf-8"))
        print(f"accuracy {r['accuracy']:.4f}  mean fold accuracy {r['mean_fold_accuracy']:.4f}")
    if args.command == "ablate":
        summary = json.loads((root / "ablation.json").read_text(encoding="utf-8"))
        for row in summary["settings"]:
            print(f"{row['setting']:<24} {row['mean_fold_accuracy']:.4f}  "
                  f"delta {row['delta_mean_fold_accuracy']:+.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
