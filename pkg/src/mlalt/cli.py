"""Command-line entry point: ``mlalt <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .errors import ALTError, ConfigError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _set_pairs(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


# -- subcommands ---------------------------------------------------------------------------------

def cmd_build_vocab(args) -> int:
    from .vocab import build_vocab, load_charset_config

    langs = load_charset_config(_require_file(args.charsets, "charset config"))
    vocab = build_vocab(langs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    print(f"N={len(vocab)} languages={','.join(langs.languages)} -> {out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    from .datapipe import filter_utterances, language_counts, load_manifest, rejection_counts, \
        write_manifest, write_rejections
    from .vocab import load_charset_config

    languages = None
    if args.charsets:
        languages = load_charset_config(_require_file(args.charsets, "charset config")).languages
    entries, errors = load_manifest(_require_file(args.manifest, "manifest"), languages)
    for lineno, msg in errors:
        print(f"warning: {args.manifest}:{lineno}: {msg}", file=sys.stderr)
    # duration and character-rate rules apply to training and validation data only
    trainable = [e for e in entries if e.split != "test"]
    kept, rejected = filter_utterances(trainable, args.max_duration, args.max_char_rate)
    kept += [e for e in entries if e.split == "test"]
    # audio paths stay valid when rewritten relative to the output directory
    src_root = Path(args.manifest).resolve().parent
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for e in kept:
        e.audio = str(e.audio_path(src_root))
    write_manifest(out / "manifest.jsonl", kept)
    write_rejections(out / "rejected.tsv", rejected)
    stats = {"kept": len(kept), "rejected": rejection_counts(rejected), "malformed_lines": len(errors),
             "languages": language_counts(kept)}
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    print(f"{'language':<12}{'train':>8}{'valid':>8}{'test':>8}")
    for lang, row in stats["languages"].items():
        print(f"{lang:<12}{row['train']:>8}{row['valid']:>8}{row['test']:>8}")
    print(f"kept {len(kept)}, rejected {len(rejected)} {stats['rejected']}")
    return EXIT_OK


def cmd_synth_corpus(args) -> int:
    from .datapipe import SyntheticSpec, ambiguous_spec, generate_synthetic_corpus, separable_spec

    if args.spec:
        spec = SyntheticSpec.load(_require_file(args.spec, "synthetic spec"))
        if args.utterances is not None:
            spec.utterances = args.utterances
    else:
        preset = {"separable": separable_spec, "ambiguous": ambiguous_spec}[args.preset]
        spec = preset(args.utterances if args.utterances is not None else 50)
    spec.validate()
    entries = generate_synthetic_corpus(spec, args.out_dir, seed=args.seed)
    print(f"wrote {len(entries)} manifest entries to {Path(args.out_dir) / 'manifest.jsonl'}")
    return EXIT_OK


def _load_run_config(args):
    from .config import RunConfig, load_kv

    file_values = load_kv(args.config) if args.config else {}
    overrides = _set_pairs(args.set)
    for key in ("conditioning_mode", "seed", "epochs", "max_steps", "batch_size"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    return RunConfig.resolve(file_values, overrides)


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .datapipe import filter_utterances, load_manifest, prepare_utterances
    from .model import ALTModel
    from .trainer import train
    from .vocab import Vocabulary, build_vocab, load_charset_config

    # everything that can be wrong with the inputs is checked before training starts
    run = _load_run_config(args)
    langs = load_charset_config(_require_file(args.charsets, "charset config"))
    vocab = build_vocab(langs)
    if args.vocab:
        given = Vocabulary.load(_require_file(args.vocab, "vocabulary"))
        if given != vocab:
            raise ConfigError("vocabulary file does not match the charset config")
    manifest = _require_file(args.manifest, "manifest")
    entries, errors = load_manifest(manifest, langs.languages)
    for lineno, msg in errors:
        print(f"warning: {manifest}:{lineno}: {msg}", file=sys.stderr)
    if args.language:
        langs.index(args.language)
        entries = [e for e in entries if e.lang == args.language]
    entries = [e for e in entries if e.split in ("train", "valid")]
    kept, rejected = filter_utterances(entries)
    train_entries = [e for e in kept if e.split == "train"]
    if not train_entries:
        raise ConfigError("no training utterances left after filtering")
    mc = run.model_config(len(vocab), langs.num_languages)
    model = ALTModel(mc, seed=run.train.seed)

    root = manifest.resolve().parent
    train_utts, skipped = prepare_utterances(train_entries, vocab, langs, root)
    valid_utts, vskipped = prepare_utterances([e for e in kept if e.split == "valid"], vocab, langs, root)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.txt").write_text(run.to_text(len(vocab), langs.num_languages), encoding="utf-8")
    vocab.save(out / "vocab.txt")

    log_fh = open(out / "train.log", "w", encoding="utf-8")

    def log(line):
        log_fh.write(line + "\n")
        if line.startswith("epoch") and not args.quiet:
            print(line, flush=True)

    extra = {"train_config": run.train.to_dict(), "rejected": len(rejected),
             "skipped": len(skipped) + len(vskipped), "language_filter": args.language}
    try:
        state = train(model, train_utts, vocab, run.train, valid_utts or None, log=log)
    finally:
        log_fh.close()
    save_checkpoint(out / "best.ckpt", model, vocab, langs.languages, state.best_step, state.best_wer,
                    extra)
    print(f"best valid WER {state.best_wer:.2f}% at step {state.best_step}; "
          f"checkpoint {out / 'best.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .datapipe import load_manifest, prepare_utterances
    from .decoder import TEST_BEAM, VALID_BEAM
    from .evaluation import evaluate_corpus
    from .model import ConditioningMode
    from .vocab import LanguageSet

    ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    manifest = _require_file(args.manifest, "manifest")
    entries, errors = load_manifest(manifest, ckpt.languages)
    for lineno, msg in errors:
        print(f"warning: {manifest}:{lineno}: {msg}", file=sys.stderr)
    if args.split:
        entries = [e for e in entries if e.split == args.split]
        if not entries:
            raise ConfigError(f"no entries with split {args.split!r}")
    beam = args.beam
    if beam is None:
        beam = TEST_BEAM if all(e.split == "test" for e in entries) else VALID_BEAM
    model = ckpt.build_model()
    langs = LanguageSet(tuple(ckpt.languages), {l: frozenset() for l in ckpt.languages})
    utts, skipped = prepare_utterances(entries, ckpt.vocab, langs, manifest.resolve().parent)
    report = evaluate_corpus(model, ckpt.vocab, utts, ckpt.languages, beam_size=beam,
                             with_confusion=model.mode is ConditioningMode.SELF)
    report.excluded += len(skipped)
    report.save(args.out_dir)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_transcribe(args) -> int:
    from .checkpoint import load_checkpoint
    from .decoder import DecodeConfig, transcribe
    from .features import load_audio

    ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    model = ckpt.build_model()
    lang = None
    if model.mode.needs_language:
        if args.lang is None:
            raise UsageError(f"checkpoint is {model.mode.value}-conditioned: pass --lang "
                             f"(one of {', '.join(ckpt.languages)})")
        if args.lang not in ckpt.languages:
            raise ConfigError(f"unknown language {args.lang!r}; expected one of {', '.join(ckpt.languages)}")
        lang = ckpt.languages.index(args.lang)
    elif args.lang is not None:
        print(f"note: --lang ignored for a {model.mode.value} checkpoint", file=sys.stderr)
    paths = [_require_file(p, "audio file") for p in args.audio]
    cfg = DecodeConfig(beam_size=args.beam, lang=lang)
    for p in paths:
        print(transcribe(model, ckpt.vocab, load_audio(p), cfg), flush=True)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlalt", description="Multilingual lyrics transcription toolkit.")
    p.add_argument("--version", action="version", version=f"mlalt {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("build-vocab", help="build the joint character vocabulary")
    s.add_argument("--charsets", required=True, help="per-language charset config ('lang: chars' lines)")
    s.add_argument("--out", required=True, help="vocabulary file to write")
    s.set_defaults(func=cmd_build_vocab)

    s = sub.add_parser("prepare", help="filter a manifest and report per-language statistics")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--charsets", help="restrict to the configured languages")
    s.add_argument("--max-duration", type=float, default=30.0, help="seconds (default 30)")
    s.add_argument("--max-char-rate", type=float, default=37.5, help="characters per second (default 37.5)")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("synth-corpus", help="generate a synthetic tone corpus")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=("separable", "ambiguous"))
    g.add_argument("--spec", help="JSON corpus specification")
    s.add_argument("--utterances", type=int, help="manifest entries to generate (default 50)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth_corpus)

    s = sub.add_parser("train", help="train a model and keep the best-WER checkpoint")
    s.add_argument("--manifest", required=True)
    s.add_argument("--charsets", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config", help="flat key = value config file")
    s.add_argument("--vocab", help="check the built vocabulary against this file")
    s.add_argument("--mode", dest="conditioning_mode", help="none, enc, dec, encdec or self (default none)")
    s.add_argument("--language", help="train a monolingual model on this language only")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int, help="default 50")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--batch-size", type=int, help="default 8")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="decode a manifest and write WER reports")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--split", choices=("train", "valid", "test"))
    s.add_argument("--beam", type=int, help="default 66 for test manifests, 10 otherwise")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("transcribe", help="transcribe audio files, one line per file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("audio", nargs="+")
    s.add_argument("--lang", help="language id (required for conditioned checkpoints)")
    s.add_argument("--beam", type=int, default=10)
    s.set_defaults(func=cmd_transcribe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ALTError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
