"""Command-line entry point binding data generation, training, evaluation,
and diagnostics into reproducible runs.

Exit codes: 0 success, 2 config error, 3 missing input, 4 dependency-order
error, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import (
    config_hash,
    data_config,
    generator_config,
    load_config,
    resolve_dataset_dir,
    train_config,
)
from .errors import ConfigError, DependencyOrderError, GeomrepError, MissingInputError
from .evaluation import (
    interpolate_latents,
    run_protocol,
    save_interpolation_strip,
    save_loss_curves,
)
from .model import LatentCode, load_checkpoint_manifest, load_model, load_regressor
from .skeleton import SkeletonMap
from .synthdata import MANIFEST_NAME, DatasetReader, generate_dataset
from .training import train_baseline_regressor, train_regressor, train_representation

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_ORDER = 4


def _emit(record: dict):
    sys.stdout.write(json.dumps(record) + "\n")
    sys.stdout.flush()


def _require_dataset(cfg) -> Path:
    dataset_dir = resolve_dataset_dir(cfg)
    if not (dataset_dir / MANIFEST_NAME).exists():
        raise MissingInputError(
            f"dataset not found at {dataset_dir} (run `geomrep gen-data` first)"
        )
    return dataset_dir


def cmd_gen_data(args) -> int:
    cfg, chash = load_config(args.config, args.set)
    dataset_dir = resolve_dataset_dir(cfg)
    manifest = generate_dataset(data_config(cfg), dataset_dir)
    manifest["config_hash"] = chash
    (dataset_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    )
    _emit(
        {
            "event": "dataset",
            "dir": str(dataset_dir),
            "num_pairs": manifest["num_pairs"],
            "num_views": manifest["num_views"],
            "subjects": manifest["subjects"]["count"],
            "map_size": manifest["map_size"],
            "config_hash": chash,
        }
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, chash = load_config(args.config, args.set)
    dataset_dir = _require_dataset(cfg)
    out_root = Path(cfg["output_dir"])
    out_root.mkdir(parents=True, exist_ok=True)
    reader = DatasetReader(dataset_dir)

    if args.stage == "repr":
        tcfg = train_config(cfg, "repr")
        out = out_root / "repr"
        _, history = train_representation(
            reader, tcfg, out, arch=generator_config(cfg), resume=args.resume
        )
        for rec in history[:: max(1, len(history) // 20) or 1]:
            _emit({"event": "loss", **rec})
        _write_hash(out, chash)
        if history:
            save_loss_curves(history, out / "loss_curves.png")
        _emit({"event": "checkpoint", "stage": "repr", "dir": str(out), "config_hash": chash})
        return EXIT_OK

    if args.stage == "pose":
        encoder = Path(args.encoder) if args.encoder else out_root / "repr"
        if not (encoder / "manifest.json").exists():
            raise DependencyOrderError(
                f"no representation checkpoint at {encoder}; run train-repr first"
            )
        tcfg = train_config(cfg, "pose")
        out = out_root / "pose"
        train_regressor(reader, encoder, tcfg, out)
        _write_hash(out, chash)
        _emit({"event": "checkpoint", "stage": "pose", "dir": str(out), "config_hash": chash})
        return EXIT_OK

    # baseline
    tcfg = train_config(cfg, "baseline")
    out = out_root / ("baseline_prior" if args.input_kind == "latent+injection" else "baseline")
    encoder = None
    if args.input_kind == "latent+injection":
        encoder = Path(args.encoder) if args.encoder else out_root / "repr"
        if not (encoder / "manifest.json").exists():
            raise DependencyOrderError(
                f"no representation checkpoint at {encoder}; run train-repr first"
            )
    train_baseline_regressor(reader, tcfg, out, input_kind=args.input_kind,
                             encoder_checkpoint=encoder)
    _write_hash(out, chash)
    _emit({"event": "checkpoint", "stage": "baseline", "dir": str(out), "config_hash": chash})
    return EXIT_OK


def _write_hash(artifact_dir: Path, chash: str):
    (Path(artifact_dir) / "config_hash.txt").write_text(chash + "\n")


def _read_artifact_hash(path: Path) -> str:
    path = Path(path)
    if path.is_dir():
        hfile = path / "config_hash.txt"
        if hfile.exists():
            return hfile.read_text().strip()
        mpath = path / MANIFEST_NAME
        if mpath.exists():
            return json.loads(mpath.read_text()).get("config_hash", "")
        raise MissingInputError(f"{path}: no recorded config hash")
    doc = json.loads(path.read_text())
    return doc.get("config_hash", "")


def cmd_eval(args) -> int:
    cfg, chash = load_config(args.config, args.set)
    dataset_dir = _require_dataset(cfg)
    protocol = args.protocol or cfg["eval"]["protocol"]
    if protocol not in ("P1", "P2", "P3"):
        raise ConfigError("eval.protocol", f"unknown protocol {protocol!r}")
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(cfg["output_dir"]) / "pose"
    if not (ckpt / "manifest.json").exists():
        raise MissingInputError(f"no regressor checkpoint at {ckpt}")
    report = run_protocol(
        dataset_dir, ckpt, protocol, config_hash=chash,
        max_samples=cfg["eval"]["max_samples"],
    )
    out = Path(cfg["output_dir"]) / f"report_{protocol}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    _emit(
        {
            "event": "report",
            "path": str(out),
            "protocol": protocol,
            "metric": report.metric,
            "value": report.aggregate[report.metric],
            "config_hash": chash,
        }
    )
    return EXIT_OK


def cmd_interpolate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not (ckpt / "manifest.json").exists():
        raise MissingInputError(f"no representation checkpoint at {ckpt}")
    model, _ = load_model(ckpt)
    manifest = load_checkpoint_manifest(ckpt)
    dataset_dir = args.dataset
    if dataset_dir is None:
        raise MissingInputError("interpolate needs --dataset for the endpoint samples")
    reader = DatasetReader(dataset_dir)
    import torch

    def latent_of(index: int) -> LatentCode:
        src, _ = reader.load_maps(index)
        with torch.no_grad():
            g = model.forward_gen.encoder(torch.from_numpy(src)[None])[0]
        return LatentCode(g.double().numpy())

    regressor = None
    if args.regressor:
        regressor, _ = load_regressor(args.regressor)
    seq = interpolate_latents(
        latent_of(args.sample_a), latent_of(args.sample_b), args.steps,
        model.forward_gen, regressor,
    )
    out = Path(args.out or (ckpt / f"interp_{args.sample_a}_{args.sample_b}.png"))
    save_interpolation_strip(seq, out)
    _emit({"event": "interpolation", "path": str(out), "steps": args.steps,
           "checkpoint_step": manifest["step"]})
    return EXIT_OK


def cmd_verify(args) -> int:
    _, chash = load_config(args.config, args.set)
    recorded = _read_artifact_hash(Path(args.artifact))
    if recorded != chash:
        sys.stderr.write(
            f"config hash mismatch: artifact carries {recorded!r}, config is {chash!r}\n"
        )
        return EXIT_INTERNAL
    _emit({"event": "verified", "artifact": args.artifact, "config_hash": chash})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geomrep",
        description="Geometry-aware 3D pose representation: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="path to run-config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. --set data.num_pairs=500")

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    add_common(p)
    p.set_defaults(func=cmd_gen_data)

    for stage in ("repr", "pose", "baseline"):
        p = sub.add_parser(f"train-{stage}", help=f"train the {stage} stage")
        add_common(p)
        p.add_argument("--resume", action="store_true")
        p.add_argument("--encoder", help="representation checkpoint directory")
        if stage == "baseline":
            p.add_argument("--input-kind", default="keypoints2d",
                           choices=["keypoints2d", "latent+injection"])
        p.set_defaults(func=cmd_train, stage=stage)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    add_common(p)
    p.add_argument("--checkpoint", help="regressor checkpoint directory")
    p.add_argument("--protocol", choices=["P1", "P2", "P3"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("interpolate", help="latent interpolation strip")
    p.add_argument("--checkpoint", required=True, help="representation checkpoint")
    p.add_argument("--dataset", help="dataset directory for endpoint samples")
    p.add_argument("--regressor", help="optional pose regressor checkpoint")
    p.add_argument("--sample-a", type=int, default=0)
    p.add_argument("--sample-b", type=int, default=1)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--out", help="output PNG path")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("verify", help="check an artifact's recorded config hash")
    add_common(p)
    p.add_argument("artifact", help="dataset/checkpoint dir or report file")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        sys.stderr.write(f"config error: {e}\n")
        return EXIT_CONFIG
    except DependencyOrderError as e:
        sys.stderr.write(f"dependency error: {e}\n")
        return EXIT_ORDER
    except MissingInputError as e:
        sys.stderr.write(f"missing input: {e}\n")
        return EXIT_MISSING
    except GeomrepError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INTERNAL
    except Exception as e:  # pragma: no cover
        sys.stderr.write(f"internal error: {type(e).__name__}: {e}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
