"""Command-line surface: train, probe, spectrogram, gradcheck, ablate.

Every command is deterministic given (config, seed), writes files via
atomic rename, and ends stdout with a machine-parseable key=value line.
Exit codes are stable API: 0 ok, 2 config error, 3 numeric abort,
4 checkpoint error, 5 audio decode error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace

from . import report
from .audio import process, read_wav
from .checks import TOLERANCE, run_checks
from .config import RunConfig, config_dict, load_config
from .data import generate, load_corpus
from .errors import (AudioDecodeError, CheckpointError, ConfigError, NumericsError,
                     SerializationError)
from .ioutil import atomic_write_text
from .model import config_hash, load_checkpoint, save_checkpoint
from .tensor import save_tensor
from .train import ablate, linear_probe, pretrain


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = replace(cfg, paths=replace(cfg.paths, out_dir=args.out))
    return cfg


def _build_dataset(cfg: RunConfig):
    if cfg.paths.data_dir or cfg.paths.manifest:
        if not (cfg.paths.data_dir and cfg.paths.manifest):
            raise ConfigError("corpus ingestion needs both paths.data_dir and paths.manifest")
        return load_corpus(cfg.paths.data_dir, cfg.paths.manifest)
    return generate(cfg.data)


def _audio_dim(cfg: RunConfig, pool: str) -> int:
    if pool == "mean":
        return cfg.stft.n_bands
    return cfg.stft.n_bands * cfg.stft.target_frames


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = cfg.paths.out_dir
    os.makedirs(out, exist_ok=True)
    split = _build_dataset(cfg)

    metrics_path = os.path.join(out, "metrics.csv")
    result = pretrain(cfg.train, split, cfg.stft, metrics_path=metrics_path)

    ckpt_path = os.path.join(out, "checkpoint.bin")
    meta = {
        "visual_dim": split.train[0].visual.size,
        "audio_dim": _audio_dim(cfg, cfg.train.audio_pool),
        "hidden_dim": cfg.train.hidden_dim,
        "embed_dim": cfg.train.embed_dim,
        "audio_pool": cfg.train.audio_pool,
        "gate_fn": cfg.train.gate_fn,
        "amfm_enabled": cfg.train.amfm_enabled,
        "best_epoch": result.best_epoch,
    }
    save_checkpoint(ckpt_path, result.state, config_hash(config_dict(cfg)), meta)
    fig_path = os.path.join(out, "metrics.png")
    report.save_metrics_figure(result.records, fig_path)

    print(f"best_epoch={result.best_epoch}")
    print(f"val_loss={result.best_val_loss:.12g}")
    print(f"metrics={metrics_path}")
    print(f"figure={fig_path}")
    print(f"checkpoint={ckpt_path}")
    return 0


def cmd_probe(args) -> int:
    cfg = _run_config(args)
    ckpt_path = args.checkpoint or cfg.paths.checkpoint
    if not ckpt_path:
        raise ConfigError("probe needs --checkpoint or paths.checkpoint in the config")
    state, manifest = load_checkpoint(ckpt_path)
    meta = manifest.get("meta", {})

    # model-shape settings travel with the checkpoint, probe settings with the config
    run_cfg = replace(
        cfg.train,
        audio_pool=meta.get("audio_pool", cfg.train.audio_pool),
        gate_fn=meta.get("gate_fn", cfg.train.gate_fn),
        amfm_enabled=meta.get("amfm_enabled", cfg.train.amfm_enabled),
    )
    split = _build_dataset(cfg)
    expected = {
        "visual": split.train[0].visual.size,
        "audio": _audio_dim(cfg, run_cfg.audio_pool),
    }
    found = {
        "visual": state.visual.layers[0][0].shape[1],
        "audio": state.audio.layers[0][0].shape[1],
    }
    if expected != found:
        raise CheckpointError(
            f"checkpoint {ckpt_path} does not match the config: expected input dims "
            f"{expected}, found {found}")

    probe = linear_probe(state, split, run_cfg, cfg.stft)
    print(f"probe_best_epoch={probe.best_epoch}")
    print(f"val_accuracy={probe.val_accuracy}")
    print(f"test_accuracy={probe.accuracy}")
    return 0


def cmd_spectrogram(args) -> int:
    cfg = _run_config(args)
    wave = read_wav(args.wav)
    mel = process(wave, cfg.stft)

    if args.dest:
        dest = args.dest
        os.makedirs(os.path.dirname(dest) or ".", exist_ok=True)
    else:
        out = cfg.paths.out_dir
        os.makedirs(out, exist_ok=True)
        stem = os.path.splitext(os.path.basename(args.wav))[0]
        dest = os.path.join(out, stem + ".mel.bin")

    save_tensor(mel.values, dest)
    sidecar = dest + ".json"
    atomic_write_text(sidecar, json.dumps(
        {"stft": asdict(mel.params), "source_rate": mel.source_rate,
         "shape": list(mel.values.shape)}, indent=2) + "\n")
    fig_path = dest + ".png"
    report.save_spectrogram_figure(mel.values, fig_path,
                                   title=os.path.basename(args.wav))
    print(f"params={sidecar}")
    print(f"figure={fig_path}")
    print(f"spectrogram={dest}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_checks(n_seeds=args.seeds,
                         include_broken=args.include_broken_fixture)
    all_ok = True
    for name, err in results:
        ok = err < TOLERANCE
        all_ok &= ok
        print(f"check={name} max_rel_err={err:.3e} status={'PASS' if ok else 'FAIL'}")
    print(f"gradcheck={'pass' if all_ok else 'fail'} checks={len(results)}")
    return 0 if all_ok else 1


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    out = cfg.paths.out_dir
    os.makedirs(out, exist_ok=True)

    rows, summary = ablate(cfg.train, cfg.data, cfg.ablate.axes,
                           seeds=cfg.ablate.seeds, stft=cfg.stft)

    rows_path = os.path.join(out, "ablation_runs.csv")
    atomic_write_text(rows_path, "variant,seed,accuracy\n" + "".join(
        f"{r.variant},{r.seed},{r.accuracy:.12g}\n" for r in rows))
    summary_path = os.path.join(out, "ablation_summary.csv")
    atomic_write_text(summary_path, "variant,mean,sd\n" + "".join(
        f"{name},{mean:.12g},{sd:.12g}\n" for name, mean, sd in summary))
    fig_path = os.path.join(out, "ablation.png")
    report.save_ablation_figure(summary, fig_path)

    print(f"rows={rows_path}")
    print(f"figure={fig_path}")
    print(f"summary={summary_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avcl",
        description="Self-supervised audio-visual contrastive learning at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration file")
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed overriding data and training seeds")
        sp.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser("train", help="pretrain encoders and save the best checkpoint")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("probe", help="linear-probe a checkpoint, print test accuracy")
    common(sp)
    sp.add_argument("--checkpoint", help="checkpoint file written by train")
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("spectrogram", help="convert a WAV file to a mel spectrogram")
    common(sp)
    sp.add_argument("wav", help="input WAV (16-bit PCM or 32-bit float)")
    sp.add_argument("dest", nargs="?", default=None,
                    help="output tensor file (default: <out>/<stem>.mel.bin)")
    sp.set_defaults(func=cmd_spectrogram)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    common(sp)
    sp.add_argument("--seeds", type=int, default=10, help="random draws per check")
    sp.add_argument("--include-broken-fixture", action="store_true",
                    help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate", help="run the ablation grid and summarize accuracy")
    common(sp)
    sp.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, SerializationError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 4
    except AudioDecodeError as exc:
        print(f"audio decode error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
