"""``asr`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .audio_io import SynthSpec, load_wav, synth_dataset
from .augment import AugmentPolicy
from .config import KEYS_BY_NAME, RunConfig, describe_keys
from .ctc import beam_decode, greedy_decode, log_softmax
from .dataset import (
    Vocabulary,
    build_vocab,
    load_manifest_lines,
    normalize_text,
    save_manifest,
    split_by_speaker,
)
from .estimator import LogMelExtractor
from .exceptions import ConfigError, CTCInfeasibleError, DataError, NumericalError
from .features import write_features
from .metrics import corpus_wer
from .model import AcousticModel, desk_config, load_checkpoint, save_checkpoint
from .optim import OptHyper, Utterance, check_feasible, pad_batch, train_loop

log = logging.getLogger("convctc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LOG_HEADER = ("epoch", "split", "loss", "wer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- configuration helpers ---------------------------------------------------

def _overrides(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value
    return out


def load_run_config(args) -> RunConfig:
    overrides = _overrides(getattr(args, "set", None))
    for flag, key in (("epochs", "optim.epochs"), ("arch", "model.arch"), ("augment", "augment.enabled")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig(overrides)


def frame_extractor(cfg: RunConfig) -> LogMelExtractor:
    return LogMelExtractor(
        sample_rate=cfg["audio.sample_rate"], win_length=cfg["features.win_length"],
        hop_length=cfg["features.hop_length"], n_fft=cfg["features.n_fft"],
        window=cfg["features.window"], n_mels=cfg["features.n_mels"],
        f_min=cfg["features.f_min"], f_max=cfg["features.f_max"],
        log_epsilon=cfg["features.log_epsilon"],
    ).fit()


def augment_policy(cfg: RunConfig):
    if not cfg["augment.enabled"]:
        return None
    return AugmentPolicy(
        cfg["augment.n_freq_masks"], cfg["augment.max_freq_width"], cfg["augment.n_time_masks"],
        cfg["augment.max_time_width"], cfg["augment.fill"], cfg["augment.max_time_fraction"],
    )


def model_config(cfg: RunConfig, n_outputs: int):
    return desk_config(
        cfg["model.arch"], cfg["features.n_mels"], n_outputs, cfg["model.n_blocks"],
        cfg["model.repeat"], cfg["model.channels"], cfg["model.kernels"], cfg["model.dropout"],
    )


def opt_hyper(cfg: RunConfig) -> OptHyper:
    return OptHyper(cfg["optim.learning_rate"], cfg["optim.weight_decay"],
                    cfg["optim.beta1"], cfg["optim.beta2"], cfg["optim.epsilon"])


def synth_spec(cfg: RunConfig, seed: int) -> SynthSpec:
    vocab = cfg["data.vocabulary"]
    tone_map = {
        tok: (cfg["data.tone_base_hz"] + i * cfg["data.tone_step_hz"], cfg["audio.tone_duration"])
        for i, tok in enumerate(vocab)
    }
    return SynthSpec(
        n_utterances=cfg["data.n_utterances"],
        tokens_per_utterance=(cfg["data.min_tokens"], cfg["data.max_tokens"]),
        vocabulary=vocab, tone_map=tone_map, noise_amplitude=cfg["audio.noise_amplitude"],
        seed=seed, n_speakers=cfg["data.n_speakers"],
        speaker_offset_hz=cfg["audio.speaker_offset_hz"], gap_duration=cfg["audio.gap_duration"],
        amplitude=cfg["audio.amplitude"], sample_rate=cfg["audio.sample_rate"],
        min_separation_hz=2 * cfg["audio.sample_rate"] / cfg["features.n_fft"],
    )


def _vocab_text(vocab: Vocabulary) -> str:
    return f"vocab.unit = {vocab.unit}\nvocab.tokens = {json.dumps(list(vocab.tokens))}\n"


def _split_checkpoint_text(text):
    """Separate the stored RunConfig and vocabulary from the model block."""
    run, vocab = {}, {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key.startswith("vocab."):
            vocab[key] = value
        elif key in KEYS_BY_NAME:
            run[key] = value
    if "vocab.tokens" not in vocab:
        raise DataError("checkpoint carries no vocabulary")
    return RunConfig(run), Vocabulary(vocab["vocab.unit"], tuple(json.loads(vocab["vocab.tokens"])))


def open_checkpoint(path, args):
    """Load a checkpoint, checking it against any explicitly supplied config."""
    model, text = load_checkpoint(path)
    stored, vocab = _split_checkpoint_text(text)
    if args.config or getattr(args, "set", None):
        requested = load_run_config(args)
        for key in list(stored.section("model")) + list(stored.section("features")):
            if requested[key] != stored[key]:
                raise DataError(
                    f"{path}: checkpoint/config mismatch on {key} "
                    f"(checkpoint {stored[key]!r}, config {requested[key]!r})"
                )
    if model.config.n_outputs != len(vocab) + 1:
        raise DataError(f"{path}: output layer does not match the stored vocabulary")
    return model, stored, vocab


def load_utterances(manifest_path, cfg: RunConfig, vocab=None):
    """Returns ``(entries, utterances, vocab, line_numbers)``."""
    numbered = load_manifest_lines(manifest_path)
    if not numbered:
        raise DataError(f"{manifest_path}: manifest is empty")
    lines = [n for n, _ in numbered]
    entries = [e for _, e in numbered]
    base = Path(manifest_path).parent
    extractor = frame_extractor(cfg)
    texts = []
    for lineno, entry in numbered:
        try:
            texts.append(normalize_text(entry.text))
        except DataError as exc:
            raise DataError(f"{manifest_path}, line {lineno}: {exc}") from exc
    if vocab is None:
        vocab = build_vocab(texts, cfg["data.unit"])
    utts = []
    for (lineno, entry), text in zip(numbered, texts):
        try:
            clip = load_wav(entry.resolve(base))
            if abs(clip.duration - entry.duration) > 0.01 * clip.duration:
                raise DataError(
                    f"duration {entry.duration} s disagrees with the audio ({clip.duration:.4f} s)"
                )
            feats = extractor.transform(clip)[0]
            labels = vocab.encode(text)
        except (DataError, FileNotFoundError) as exc:
            raise DataError(f"{manifest_path}, line {lineno}: {exc}") from exc
        utts.append(Utterance(feats, labels, text))
    return entries, utts, vocab, lines


def check_manifest_feasible(model, manifest_path, utts, lines):
    try:
        check_feasible(model, utts)
    except CTCInfeasibleError as exc:
        raise CTCInfeasibleError(
            f"{manifest_path}, line {lines[exc.index]}: transcript {utts[exc.index].text!r} "
            f"is too long for its audio under CTC"
        ) from exc


def decode_batch(model, utterances, beam=0, batch_size=8):
    results = []
    for start in range(0, len(utterances), batch_size):
        chunk = utterances[start: start + batch_size]
        batch, lengths = pad_batch(chunk)
        logits, out_lengths, _ = model.forward(batch, lengths, mode="eval")
        for i in range(len(chunk)):
            lp = log_softmax(logits[i, : out_lengths[i]])
            results.append(beam_decode(lp, beam) if beam else greedy_decode(lp))
    return results


# -- commands ----------------------------------------------------------------

def cmd_synth_data(args, cfg: RunConfig):
    out = Path(args.out)
    spec = synth_spec(cfg, args.seed)
    entries = synth_dataset(spec, out)
    if not entries:
        raise DataError("no utterances generated (data.n_utterances = 0)")
    splits = split_by_speaker(entries, cfg["data.fractions"], args.seed)
    for name, split in zip(("train", "dev", "test"), splits):
        save_manifest(split, out / f"{name}.jsonl")
        speakers = sorted({e.speaker for e in split})
        print(f"{name}: {len(split)} utterances, {len(speakers)} speakers")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, train, vocab, train_lines = load_utterances(args.train, cfg)
    model = AcousticModel(model_config(cfg, len(vocab) + 1), seed=args.seed)
    check_manifest_feasible(model, args.train, train, train_lines)
    dev = None
    if args.dev:
        _, dev, _, dev_lines = load_utterances(args.dev, cfg, vocab)
        check_manifest_feasible(model, args.dev, dev, dev_lines)
    model.params["output.bias"][-1] = cfg["model.blank_bias"]
    extra = cfg.to_text() + _vocab_text(vocab)
    save_checkpoint(out / "best.ckpt", model, extra)

    log_path = out / "train_log.csv"
    fh = open(log_path, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(LOG_HEADER)
    best = [np.inf]

    def sink(rec):
        writer.writerow((rec.epoch, rec.split, repr(rec.loss), repr(rec.wer)))
        fh.flush()

    def on_epoch_end(epoch, records):
        save_checkpoint(out / "last.ckpt", model, extra)
        score = records[-1].wer  # dev when available, else train
        if score < best[0]:
            best[0] = score
            save_checkpoint(out / "best.ckpt", model, extra)

    try:
        train_loop(
            model, train, opt_hyper(cfg), cfg["optim.epochs"], np.random.default_rng(args.seed),
            decode_text=vocab.decode, dev=dev, batch_size=cfg["optim.batch_size"],
            augment=augment_policy(cfg), log_sink=sink, on_epoch_end=on_epoch_end,
        )
    finally:
        fh.close()
    print(f"wrote {out / 'best.ckpt'} and {log_path}")
    return EXIT_OK


def _table(rows):
    header = ("model", "augmentation", "wer")
    cells = [header] + [(r[0], r[1], f"{r[2]:.4f}") for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(3)]
    return "\n".join("  ".join(c[i].ljust(widths[i]) for i in range(3)).rstrip() for c in cells)


def cmd_eval(args, cfg_unused):
    rows, details = [], []
    for ckpt in args.checkpoint:
        model, stored, vocab = open_checkpoint(ckpt, args)
        entries, utts, _, _ = load_utterances(args.manifest, stored, vocab)
        results = decode_batch(model, utts, args.beam, stored["optim.batch_size"])
        hyps = [vocab.decode(r.ids) for r in results]
        score = corpus_wer((u.text, h) for u, h in zip(utts, hyps))
        name = {"jasper": "Jasper", "quartznet": "QuartzNet"}[model.config.arch]
        aug = "yes" if stored["augment.enabled"] else "no"
        rows.append((name, aug, score))
        for e, u, h, r in zip(entries, utts, hyps, results):
            details.append((ckpt, e.audio_filepath, u.text, h, repr(r.score)))
    print(_table(rows))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("model", "augmentation", "wer"))
    writer.writerows((r[0], r[1], repr(r[2])) for r in rows)
    csv_path = Path(args.csv) if args.csv else Path(args.checkpoint[0]).parent / "eval.csv"
    csv_path.write_text(buf.getvalue())
    print(f"wrote {csv_path}")
    if args.details:
        with open(args.details, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("checkpoint", "audio_filepath", "reference", "hypothesis", "score"))
            writer.writerows(details)
    return EXIT_OK


def cmd_transcribe(args, cfg_unused):
    model, stored, vocab = open_checkpoint(args.checkpoint, args)
    extractor = frame_extractor(stored)
    utts = []
    for path in args.wav:
        try:
            clip = load_wav(path)
        except (DataError, FileNotFoundError) as exc:
            raise DataError(f"{path}: {exc}") from exc
        utts.append(Utterance(extractor.transform(clip)[0], None, ""))
    for result in decode_batch(model, utts, args.beam):
        print(" ".join(vocab.decode(result.ids).split()))
    return EXIT_OK


def cmd_featurize(args, cfg: RunConfig):
    try:
        clip = load_wav(args.wav)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    feats = frame_extractor(cfg).transform(clip)[0]
    write_features(feats, args.out)
    print(f"{args.out}: {feats.shape[0]} x {feats.shape[1]}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser():
    epilog = "configuration keys (set in --config files or with --set KEY=VALUE):\n" + describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="asr", description="Convolutional CTC speech recognition.",
                     epilog=epilog, formatter_class=fmt)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable; wins over --config)")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", parents=[common], epilog=epilog, formatter_class=fmt,
                       help="generate a synthetic corpus and speaker-disjoint splits")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("featurize", parents=[common], epilog=epilog, formatter_class=fmt,
                       help="write normalized log-mel features of one WAV (FMX1 format)")
    p.add_argument("wav")
    p.add_argument("out")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], epilog=epilog, formatter_class=fmt,
                       help="train an acoustic model")
    p.add_argument("--train", required=True, help="training manifest (JSON Lines)")
    p.add_argument("--dev", help="development manifest used to pick best.ckpt")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, help="overrides optim.epochs")
    p.add_argument("--arch", choices=("jasper", "quartznet"), help="overrides model.arch")
    aug = p.add_mutually_exclusive_group()
    aug.add_argument("--augment", dest="augment", action="store_const", const="true",
                     help="enable masking augmentation")
    aug.add_argument("--no-augment", dest="augment", action="store_const", const="false")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], epilog=epilog, formatter_class=fmt,
                       help="pooled WER of one or more checkpoints on a manifest")
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--manifest", required=True)
    p.add_argument("--beam", type=int, default=0, help="beam width (0 = greedy, default)")
    p.add_argument("--csv", help="CSV output path (default: eval.csv beside the checkpoint)")
    p.add_argument("--details", help="optional per-utterance CSV with decode scores")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transcribe", parents=[common], epilog=epilog, formatter_class=fmt,
                       help="print one transcript per WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--beam", type=int, default=0, help="beam width (0 = greedy, default)")
    p.add_argument("wav", nargs="+")
    p.set_defaults(func=cmd_transcribe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1 or getattr(args, "beam", 0) < 0:
        parser.error("--threads must be >= 1 and --beam >= 0")
    from threadpoolctl import threadpool_limits

    try:
        cfg = load_run_config(args)
        with threadpool_limits(limits=args.threads):
            return args.func(args, cfg)
    except ConfigError as exc:
        print(f"asr: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"asr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"asr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
