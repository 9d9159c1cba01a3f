"""``specreplay`` command line: synth, extract, train, score, fuse, eval.

The JSON config file is the experiment record; ``--set section.key=value``
flags override single entries. Errors exit nonzero with one line on stderr::

    error: <category>: <detail>
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, container
from .audio import SynthConfig, atomic_write_bytes, load_corpus, parse_protocol, synthesize_corpus, write_corpus
from .errors import ConfigError, InputError, SpecReplayError
from .features import mfcc_with_deltas, spectrogram
from .metrics import breakdown_report, det_points, fuse_scores, parse_scores, summary_table
from .pipeline import System, apply_overrides, experiment_from_config, read_config, train_system

log = logging.getLogger("specreplay")


def _config(args, seed_key=None):
    raw = apply_overrides(read_config(args.config), args.set)
    if seed_key and args.seed is not None:
        section, key = seed_key
        raw.setdefault(section, {})[key] = args.seed
    return raw


def _write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_protocol(path):
    p = Path(path)
    if p.is_dir():
        p = p / "protocol.txt"
    try:
        return parse_protocol(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read protocol {p}: {exc}") from exc


def _read_scores(paths, protocol):
    sets = []
    for path in paths:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read score file {path}: {exc}") from exc
        sets.append(parse_scores(text, protocol, Path(path).stem))
    return sets


# commands ----------------------------------------------------------------------

def cmd_synth(args):
    raw = _config(args, ("synth", "rng_seed"))
    try:
        cfg = SynthConfig.from_dict(raw.get("synth", {}))
    except TypeError as exc:
        raise ConfigError(f"bad synth section: {exc}") from exc
    clips, entries = synthesize_corpus(cfg)
    write_corpus(args.out, clips, entries)
    print(f"wrote {len(clips)} utterances to {args.out}")


def cmd_extract(args):
    raw = _config(args)
    exp = experiment_from_config(raw)
    clips = load_corpus(args.corpus, resample=args.resample)
    tensors, skipped = {}, []
    for clip in clips:
        try:
            if args.features == "spectrogram":
                tensors[clip.utterance_id] = spectrogram(clip, exp.features).values
            else:
                tensors[clip.utterance_id] = mfcc_with_deltas(clip)
        except InputError as exc:
            log.warning("skipping %s: %s", clip.utterance_id, exc)
            skipped.append(clip.utterance_id)
    meta = {"features": args.features, "config": exp.to_dict()["features"], "skipped": skipped}
    container.save(args.out, tensors, meta)
    print(f"wrote {len(tensors)} feature tensors to {args.out} ({len(skipped)} skipped)")


def cmd_train(args):
    raw = _config(args, ("train", "seed"))
    exp = experiment_from_config(raw, args.kind)
    if args.system_id:
        exp.system_id = args.system_id
    train = load_corpus(args.train, resample=args.resample)
    dev = load_corpus(args.dev, resample=args.resample) if args.dev else None
    system, tlog, extras = train_system(exp, train, dev)
    system.save(args.out, extras)
    log_path = args.log or str(args.out) + ".log.jsonl"
    _write_text(log_path, tlog.lines())
    print(f"trained {system.system_id}: best epoch {tlog.best_epoch}, "
          f"final train acc {tlog.epoch_train_acc[-1]:.3f}; checkpoint {args.out}")


def cmd_score(args):
    clips = load_corpus(args.corpus, resample=args.resample)
    out_dir = Path(args.out_dir)
    for ckpt in args.checkpoints:
        system = System.load(ckpt)
        scores = system.score(clips)
        path = out_dir / (Path(ckpt).stem + ".scores")
        _write_text(path, scores.to_text())
        print(f"wrote {len(scores.entries)} scores to {path}")


def cmd_fuse(args):
    protocol = _read_protocol(args.protocol)
    fused = fuse_scores(_read_scores(args.scores, protocol), znorm=args.znorm)
    _write_text(args.out, fused.to_text())
    print(f"fused {len(args.scores)} systems into {args.out}")


def cmd_eval(args):
    raw = _config(args)
    params = experiment_from_config(raw).tdcf
    protocol = _read_protocol(args.protocol)
    sets = _read_scores(args.scores, protocol)
    reports = [breakdown_report(s, params) for s in sets]
    text = "".join(r.table() + "\n" for r in reports)
    if len(reports) > 1:
        text += summary_table(reports)
    sys.stdout.write(text)
    if args.out_dir:
        out = Path(args.out_dir)
        payload = {"reports": [r.to_dict() for r in reports]}
        _write_text(out / "report.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
        _write_text(out / "report.txt", text)
        for s in sets:
            rows = det_points(s)
            body = "threshold p_miss p_fa\n" + "".join(f"{t!r} {m!r} {f!r}\n" for t, m, f in rows.tolist())
            _write_text(out / f"{s.system_id}.det.txt", body)


# parser ------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: packaged desk-scale config)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config entry; VALUE is parsed as JSON when possible")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="specreplay", description="Replay-attack spoofing detection toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic replay corpus")
    p.add_argument("--out", required=True, help="corpus directory to create")
    p.add_argument("--seed", type=int, help="corpus RNG seed (overrides synth.rng_seed)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], help="write per-utterance feature tensors")
    p.add_argument("--corpus", required=True)
    p.add_argument("--features", choices=("spectrogram", "mfcc"), default="spectrogram")
    p.add_argument("--out", required=True, help="output tensor container")
    p.add_argument("--resample", action="store_true", help="resample audio at other rates instead of rejecting it")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train one system and write its checkpoint")
    p.add_argument("--train", required=True, help="training corpus directory")
    p.add_argument("--dev", help="development corpus for checkpoint selection")
    p.add_argument("--kind", choices=("spec", "wave", "ivec"), help="overrides the config's kind")
    p.add_argument("--system-id")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log path (default: <out>.log.jsonl)")
    p.add_argument("--seed", type=int, help="training seed (overrides train.seed)")
    p.add_argument("--resample", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common], help="score a corpus with one or more checkpoints")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True, help="one <checkpoint-stem>.scores file per checkpoint")
    p.add_argument("--resample", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fuse", parents=[common], help="sum score files per utterance")
    p.add_argument("scores", nargs="+")
    p.add_argument("--protocol", required=True, help="protocol file or corpus directory")
    p.add_argument("--znorm", action="store_true", help="z-normalize each system before summing")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", parents=[common], help="EER / min t-DCF report with the per-configuration grid")
    p.add_argument("scores", nargs="+")
    p.add_argument("--protocol", required=True, help="protocol file or corpus directory")
    p.add_argument("--out-dir", help="write report.json, report.txt and DET points here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SpecReplayError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: input: {exc}", file=sys.stderr)
        return InputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
