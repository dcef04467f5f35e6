"""Command-line entry point.

Every command works inside a run directory (``--out``, default from the
config) with the layout::

    config.yaml  manifest.json  checkpoints/  logs/  units/  audio/  reports/  features/

On failure the process exits non-zero after printing a single line
``error:<category>: <message>`` to stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import __version__
from .audio import Spectrogram, load_waveform, spectrogram_to_mel, waveform_to_spectrogram
from .config import load_config
from .conversion import ConversionRequest, convert_file, convert_spectrogram, encode_spectrogram
from .corpus import CorpusManifest, load_corpus, make_toy_corpus, scan_corpus
from .data import SOURCE, TARGET
from .errors import ConfigurationError, MbvError, PreconditionError
from .evaluation import (LabeledUtterance, chunk_segments, load_unit_corpus, metrics_report, probe_accuracy,
                         train_probe)
from .state import ModelState
from .training import LossLog, train_stage1, train_stage2
from .units import write_unit_file

log = logging.getLogger("mbvvc")


class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    def __getattr__(self, name):
        if name in ("checkpoints", "logs", "units", "audio", "reports", "features"):
            p = self.root / name
            p.mkdir(parents=True, exist_ok=True)
            return p
        raise AttributeError(name)

    @property
    def config(self):
        return self.root / "config.yaml"

    @property
    def manifest(self):
        return self.root / "manifest.json"


def _resolve_config(args):
    overrides = list(args.set or [])
    base = args.config
    if base is None and args.out and (Path(args.out) / "config.yaml").exists():
        base = Path(args.out) / "config.yaml"
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append({"out_dir": str(args.out)})
    cfg = load_config(base, overrides)
    run = RunDir(cfg.out_dir)
    run.root.mkdir(parents=True, exist_ok=True)
    cfg.dump(run.config)
    return cfg, run


def _load_manifest(run):
    if not run.manifest.exists():
        raise PreconditionError(f"no manifest in {run.root}; run `prepare` first")
    return CorpusManifest.load(run.manifest)


def _load_state(cfg, path):
    return ModelState.load(path, model_cfg=cfg.model, train_cfg=cfg.train)


def _checkpoint_for(run, args, prefer_adv):
    if getattr(args, "checkpoint", None):
        return Path(args.checkpoint)
    adv = run.root / "checkpoints" / "adv.npz"
    if prefer_adv and adv.exists():
        return adv
    ae = run.root / "checkpoints" / "ae.npz"
    if not ae.exists() and not adv.exists():
        raise PreconditionError(f"no checkpoint in {run.root / 'checkpoints'}; run `train-ae` first")
    return ae if ae.exists() else adv


# ---------------------------------------------------------------------------
# commands


def cmd_make_toy(args, cfg, run):
    out = make_toy_corpus(args.dir, args.speakers, args.contents, args.utts, args.toy_seed)
    print(json.dumps({"corpus": str(out), "source": str(out / SOURCE), "target": str(out / TARGET)}))


def cmd_prepare(args, cfg, run):
    manifest = scan_corpus(args.source_root, SOURCE).merge(scan_corpus(args.target_root, TARGET))
    manifest.save(run.manifest)
    (run.reports / "rejects.json").write_text(json.dumps(manifest.rejects, indent=1) + "\n")
    corpus = load_corpus(manifest, run.features, cfg.audio)
    print(json.dumps({"utterances": len(corpus), "speakers": len(manifest.speakers),
                      "rejects": len(manifest.rejects)}))


def cmd_train_ae(args, cfg, run):
    manifest = _load_manifest(run)
    corpus = load_corpus(manifest, run.features, cfg.audio)
    ckpt = run.root / "checkpoints" / "ae.npz"
    if args.resume and ckpt.exists():
        state = _load_state(cfg, ckpt)
    else:
        state = ModelState(cfg.model, corpus.speakers, cfg.train, seed=cfg.seed)
    steps = cfg.train.stage1_steps if args.steps is None else args.steps
    train_stage1(corpus, cfg.train, state, steps=steps, loss_log=LossLog(run.logs / "train_ae.csv"),
                 checkpoint_dir=run.checkpoints)
    state.save(run.checkpoints / "ae.npz")
    print(json.dumps({"checkpoint": str(run.checkpoints / "ae.npz"), "step": state.step}))


def cmd_train_adv(args, cfg, run):
    manifest = _load_manifest(run)
    src = Path(args.checkpoint) if args.checkpoint else run.root / "checkpoints" / "ae.npz"
    if not src.exists():
        raise PreconditionError(f"stage 2 needs a stage-1 checkpoint, {src} not found")
    state = _load_state(cfg, src)
    corpus = load_corpus(manifest, run.features, cfg.audio, speakers=state.speakers)
    steps = cfg.train.stage2_steps if args.steps is None else args.steps
    train_stage2(corpus.subset(SOURCE), corpus.subset(TARGET), cfg.train, state, steps=steps,
                 loss_log=LossLog(run.logs / "train_adv.csv"), checkpoint_dir=run.checkpoints)
    state.save(run.checkpoints / "adv.npz")
    print(json.dumps({"checkpoint": str(run.checkpoints / "adv.npz"), "step": state.step,
                      "adv_step": state.adv_step}))


def _update_durations(run, entries):
    path = run.units / "durations.json"
    durations = json.loads(path.read_text()) if path.exists() else {}
    durations.update(entries)
    path.write_text(json.dumps(dict(sorted(durations.items())), indent=1) + "\n")


def _inputs(paths):
    out = []
    for p in map(Path, paths):
        out += sorted(p.rglob("*.wav")) if p.is_dir() else [p]
    if not out:
        raise ConfigurationError("no input WAV files given")
    return out


def cmd_encode(args, cfg, run):
    state = _load_state(cfg, _checkpoint_for(run, args, prefer_adv=False))
    durations = {}
    for path in _inputs(args.inputs):
        wav = load_waveform(path, cfg.audio.sample_rate)
        spec = waveform_to_spectrogram(wav, cfg.audio)
        write_unit_file(run.units / f"{path.stem}.txt", encode_spectrogram(spec, state))
        durations[path.stem] = wav.duration
    _update_durations(run, durations)
    print(json.dumps({"units": str(run.units), "files": len(durations)}))


def cmd_convert(args, cfg, run):
    state = _load_state(cfg, _checkpoint_for(run, args, prefer_adv=args.patcher))
    speaker = state.speakers.lookup(args.target_speaker)
    outputs, durations = [], {}
    for path in _inputs(args.inputs):
        out = run.audio / f"{path.stem}_to_{args.target_speaker}.wav"
        req = ConversionRequest(path, speaker, args.patcher, out, run.units / f"{path.stem}.txt")
        convert_file(req, state, cfg.audio, args.gl_iters)
        outputs.append(str(out))
        durations[path.stem] = load_waveform(path, cfg.audio.sample_rate).duration
    _update_durations(run, durations)
    print(json.dumps({"outputs": outputs}))


def _durations_from(path):
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict) and "entries" in data:
        m = CorpusManifest.from_dict(data)
        return {Path(e.path).stem: e.duration for _, e, _ in m.files()}
    return data


def _probe_score(cfg, run, args):
    """Train the speaker probe on real data and score source->target conversions."""
    manifest = _load_manifest(run)
    state = _load_state(cfg, _checkpoint_for(run, args, prefer_adv=args.patcher))
    corpus = load_corpus(manifest, run.features, cfg.audio, speakers=state.speakers)
    mel = lambda frames: spectrogram_to_mel(Spectrogram(frames), cfg.audio).frames
    real = [LabeledUtterance(u.key, mel(u.frames), u.speaker) for u in corpus.utterances]
    probe = train_probe(real, state.speakers.names, cfg.probe)
    converted = []
    for u in corpus.subset(SOURCE).utterances:
        for t in state.speakers.target_ids:
            out = convert_spectrogram(Spectrogram(u.frames), t, state, use_patcher=args.patcher)
            converted.append(LabeledUtterance(u.key, mel(out.frames), t))
    return probe_accuracy(probe, chunk_segments(converted, cfg.probe.seg_len))


def cmd_evaluate(args, cfg, run):
    units = Path(args.units) if args.units else run.units
    durations = _durations_from(args.manifest) if args.manifest else units / "durations.json"
    corpus = load_unit_corpus(units, durations)
    acc = _probe_score(cfg, run, args) if args.probe else None
    report = metrics_report(corpus, cfg.eval.collapse_repeats, acc)
    (run.reports / "metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(json.dumps(report, sort_keys=True))


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="mbvvc", description="Binary-unit voice conversion: train, encode, convert, evaluate.")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="run directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override, e.g. train.batch_size=8 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-toy", parents=[common], help="synthesize the toy corpus")
    s.add_argument("dir", help="output directory")
    s.add_argument("--speakers", type=int, default=2, help="speakers (first half source, rest target)")
    s.add_argument("--contents", type=int, default=4, help="distinct phone sequences")
    s.add_argument("--utts", type=int, default=5, help="utterances per speaker and content")
    s.add_argument("--toy-seed", type=int, default=0, help="synthesis seed")
    s.set_defaults(func=cmd_make_toy)

    s = sub.add_parser("prepare", parents=[common], help="scan corpora and cache features")
    s.add_argument("--source-root", required=True, help="<root>/<speaker>/*.wav for source speakers")
    s.add_argument("--target-root", required=True, help="<root>/<speaker>/*.wav for target speakers")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train-ae", parents=[common], help="stage-1 autoencoder training")
    s.add_argument("--steps", type=int, help="override train.stage1_steps")
    s.add_argument("--resume", action="store_true", help="continue from checkpoints/ae.npz")
    s.set_defaults(func=cmd_train_ae)

    s = sub.add_parser("train-adv", parents=[common], help="stage-2 adversarial patcher training")
    s.add_argument("--steps", type=int, help="override train.stage2_steps")
    s.add_argument("--checkpoint", help="stage-1 checkpoint (default checkpoints/ae.npz)")
    s.set_defaults(func=cmd_train_adv)

    s = sub.add_parser("encode", parents=[common], help="write unit files for WAV inputs")
    s.add_argument("--in", dest="inputs", nargs="+", required=True, help="WAV files or directories")
    s.add_argument("--checkpoint", help="checkpoint to use (default from the run directory)")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("convert", parents=[common], help="voice-convert WAV inputs")
    s.add_argument("--in", dest="inputs", nargs="+", required=True, help="WAV files or directories")
    s.add_argument("--target-speaker", required=True, help="speaker name from the manifest")
    s.add_argument("--patcher", action=argparse.BooleanOptionalAction, default=False, help="apply the stage-2 mask")
    s.add_argument("--gl-iters", type=int, help="Griffin-Lim iterations (default from config)")
    s.add_argument("--checkpoint", help="checkpoint to use (default from the run directory)")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("evaluate", parents=[common], help="bitrate / distinct / probe metrics")
    s.add_argument("--units", help="unit-file directory (default <out>/units)")
    s.add_argument("--manifest", help="durations JSON or corpus manifest")
    s.add_argument("--probe", action="store_true", help="also train the speaker probe and score conversions")
    s.add_argument("--patcher", action=argparse.BooleanOptionalAction, default=False, help="score patched conversions")
    s.add_argument("--checkpoint", help="checkpoint to use (default from the run directory)")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        torch.use_deterministic_algorithms(True)
        cfg, run = _resolve_config(args)
        args.func(args, cfg, run)
    except MbvError as exc:
        print(f"error:{exc.category}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except Exception as exc:  # keep the one-line contract for unexpected failures too
        log.debug("unhandled", exc_info=True)
        print(f"error:internal: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
