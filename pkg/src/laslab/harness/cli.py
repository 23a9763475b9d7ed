"""``laslab`` command line: gen-data, train, decode, eval, build-lm, sweep.

Every command reads an optional ``--config`` file of ``key = value`` lines;
``--key value`` flags override it.  Outputs get a ``stamp.json`` (config hash
and seed) next to them.  Relative output paths resolve against ``$LASLAB_OUT``
when that variable is set.

Exit codes: 0 ok, 1 usage/configuration, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..charlm import lexicon_from_transcripts, load_char_scorer, train_ngram, write_arpa
from ..decoding import DecodeConfig, beam_search, corpus_cer, ser
from ..errors import CheckpointError, ConfigError, InputError, NormalizationError, NumericError, VocabularyError
from ..las import LasConfig, LasModel, load_checkpoint
from ..training import TrainConfig, train_loop
from ..vocab import Vocabulary
from .config import Key, resolve, write_stamp
from .formats import atomic_write_text, read_manifest, read_table, write_lexicon
from .synthetic import SyntheticTaskSpec, generate, load_split

log = logging.getLogger("laslab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "LASLAB_OUT"


class UsageError(Exception):
    pass


def _dataclass_keys(cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default
        if default is None or default is dataclasses.MISSING:
            continue
        out[f.name] = Key(default)
    return out


_DECODE_KEYS = {
    "data": Key("data", "data directory from gen-data"),
    "split": Key("test"),
    "model": Key("model/model.lasc"),
    "beam": Key(30),
    "tau": Key(2.0),
    "gamma": Key(0.1),
    "lm": Key("", "directory holding lexicon.txt and lm.arpa; empty disables the LM"),
    "lm_mode": Key("step"),
    "temper_scores": Key(False),
    "max_len": Key(0, "0 means twice the frame count"),
    "unk_penalty": Key(-10.0),
    "max_utts": Key(0, "0 decodes the whole split"),
}

SCHEMAS = {
    "gen-data": {"out": Key("data"), **_dataclass_keys(SyntheticTaskSpec)},
    "train": {
        "data": Key("data"),
        "out": Key("model"),
        "dtype": Key("float32"),
        "model_seed": Key(0),
        **_dataclass_keys(LasConfig, skip=("input_dim", "vocab_size")),
        **_dataclass_keys(TrainConfig),
    },
    "decode": {**_DECODE_KEYS, "out": Key("hyp.txt")},
    "eval": {"ref": Key("data/test/text"), "hyp": Key("hyp.txt"), "out": Key("")},
    "build-lm": {"data": Key("data"), "split": Key("train"), "order": Key(3), "out": Key("lm")},
    "sweep": {**_DECODE_KEYS, "param": Key("beam"), "values": Key("1,2,5,10,30"), "out": Key("")},
}


def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(OUT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


# -- commands ----------------------------------------------------------------------------------
def cmd_gen_data(cfg: dict) -> int:
    spec = SyntheticTaskSpec(**{k: v for k, v in cfg.items() if k != "out"})
    out = _out_path(cfg["out"])
    manifests = generate(spec, out)
    write_stamp(out / "stamp.json", "gen-data", cfg)
    for split, path in manifests.items():
        print(f"{split}\t{path}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    data = Path(cfg["data"])
    vocab = Vocabulary.load(data / "vocab.txt")
    train = load_split(data, "train", vocab)
    valid = load_split(data, "valid", vocab)
    las_keys = {f.name for f in dataclasses.fields(LasConfig)}
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    las_cfg = LasConfig(input_dim=train[0].features.shape[1], vocab_size=len(vocab),
                        **{k: v for k, v in cfg.items() if k in las_keys})
    train_cfg = TrainConfig(**{k: v for k, v in cfg.items() if k in train_keys})
    model = LasModel.create(las_cfg, seed=cfg["model_seed"], dtype=np.dtype(cfg["dtype"]))
    out = _out_path(cfg["out"])
    write_stamp(out / "stamp.json", "train", cfg)
    result = train_loop(model, train, valid, train_cfg, out_dir=out,
                        progress=lambda m: print(m.line(), flush=True))
    print(f"best_valid_loss_per_char\t{result.best_valid:.6f}\tepoch\t{result.best_epoch}")
    return EXIT_OK


def _decode_setup(cfg: dict):
    data = Path(cfg["data"])
    vocab = Vocabulary.load(data / "vocab.txt")
    utts = load_split(data, cfg["split"], vocab)
    if cfg["max_utts"] > 0:
        utts = utts[:cfg["max_utts"]]
    model = load_checkpoint(cfg["model"])
    if model.config.vocab_size != len(vocab):
        raise CheckpointError(f"model vocabulary {model.config.vocab_size} != data vocabulary {len(vocab)}")
    lm = None
    if cfg["lm"]:
        lm_dir = Path(cfg["lm"])
        lm = load_char_scorer(lm_dir / "lexicon.txt", lm_dir / "lm.arpa", vocab, cfg["unk_penalty"])
    return vocab, utts, model, lm


def _decode_config(cfg: dict, **override) -> DecodeConfig:
    values = dict(beam=cfg["beam"], temperature=cfg["tau"], lm_weight=cfg["gamma"],
                  max_len=cfg["max_len"] or None, lm_mode=cfg["lm_mode"],
                  temper_scores=cfg["temper_scores"])
    values.update(override)
    return DecodeConfig(**values)


def decode_utterances(model, utts, vocab, dconf: DecodeConfig, lm=None) -> list:
    """``(utt_id, hyp_chars, model_logprob, fused_cost)`` rows in utterance order."""
    rows = []
    for u in utts:
        best = beam_search(model, u.features, dconf, lm)[0]
        rows.append((u.uid, vocab.decode(best.tokens), best.model_logprob, best.fused_cost))
    return rows


def format_decode_rows(rows) -> str:
    return "".join(f"{uid}\t{hyp}\t{lp:.6f}\t{cost:.6f}\n" for uid, hyp, lp, cost in rows)


def cmd_decode(cfg: dict) -> int:
    vocab, utts, model, lm = _decode_setup(cfg)
    rows = decode_utterances(model, utts, vocab, _decode_config(cfg), lm)
    out = _out_path(cfg["out"])
    atomic_write_text(out, format_decode_rows(rows))
    write_stamp(out.with_name(out.name + ".stamp.json"), "decode", cfg)
    print(f"decoded {len(rows)} utterances -> {out}")
    return EXIT_OK


def _read_hyps(path) -> dict:
    table = read_table(path)
    return {k: v.split("\t", 1)[0] for k, v in table.items()}


def score_files(ref_path, hyp_path) -> tuple[float, float, int]:
    refs = _read_hyps(ref_path)
    hyps = _read_hyps(hyp_path)
    if not refs:
        raise InputError(f"{ref_path}: no references")
    missing = [k for k in refs if k not in hyps]
    if missing:
        log.warning("%d references have no hypothesis; scoring them as empty", len(missing))
    pairs = [(list(r.replace(" ", "")), list(hyps.get(k, "").replace(" ", ""))) for k, r in refs.items()]
    return corpus_cer(pairs), ser(pairs), len(pairs)


def cmd_eval(cfg: dict) -> int:
    c, s, n = score_files(cfg["ref"], cfg["hyp"])
    report = f"CER\t{c:.6f}\nSER\t{s:.6f}\nutterances\t{n}\n"
    print(report, end="")
    if cfg["out"]:
        out = _out_path(cfg["out"])
        atomic_write_text(out, report)
        write_stamp(out.with_name(out.name + ".stamp.json"), "eval", cfg)
    return EXIT_OK


def cmd_build_lm(cfg: dict) -> int:
    data = Path(cfg["data"])
    manifest = read_manifest(data / cfg["split"] / "manifest.tsv", check_files=False)
    transcripts = [e.transcript for e in manifest]
    lm = train_ngram(transcripts, order=cfg["order"])
    lexicon = lexicon_from_transcripts(transcripts)
    out = _out_path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_lexicon(out / "lexicon.txt", lexicon)
    write_arpa(lm, out / "lm.arpa")
    write_stamp(out / "stamp.json", "build-lm", cfg)
    print(f"lexicon\t{len(lexicon)} words\nlm\t{out / 'lm.arpa'}")
    return EXIT_OK


_SWEEP_FIELD = {"beam": ("beam", int), "tau": ("temperature", float), "gamma": ("lm_weight", float)}


def run_sweep(model, utts, vocab, cfg: dict, lm=None) -> list:
    """``(value, CER, SER)`` rows for each value of ``cfg['param']``."""
    if cfg["param"] not in _SWEEP_FIELD:
        raise ConfigError(f"param must be one of {sorted(_SWEEP_FIELD)}, got {cfg['param']!r}")
    field, kind = _SWEEP_FIELD[cfg["param"]]
    try:
        values = [kind(v) for v in str(cfg["values"]).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse values {cfg['values']!r}") from None
    if not values:
        raise ConfigError("values is empty")
    table = []
    for v in values:
        dconf = _decode_config(cfg, **{field: v})
        rows = decode_utterances(model, utts, vocab, dconf, lm)
        pairs = [(list(u.text), list(r[1])) for u, r in zip(utts, rows)]
        table.append((v, corpus_cer(pairs), ser(pairs)))
    return table


def cmd_sweep(cfg: dict) -> int:
    vocab, utts, model, lm = _decode_setup(cfg)
    table = run_sweep(model, utts, vocab, cfg, lm)
    text = f"# {cfg['param']}\tCER\tSER\n" + "".join(f"{v:g}\t{c:.6f}\t{s:.6f}\n" for v, c, s in table)
    print(text, end="")
    if cfg["out"]:
        out = _out_path(cfg["out"])
        atomic_write_text(out, text)
        write_stamp(out.with_name(out.name + ".stamp.json"), "sweep", cfg)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "build-lm": cmd_build_lm,
    "sweep": cmd_sweep,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="laslab", description="Listen-Attend-Spell laboratory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        for key, spec in schema.items():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                           help=f"{spec.help} (default: {spec.default})".strip())
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("laslab: a command is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        schema = SCHEMAS[args.command]
        overrides = {k: getattr(args, k) for k in schema if getattr(args, k) is not None}
        cfg = resolve(schema, args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, CheckpointError, VocabularyError, NormalizationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
