"""Command-line entry points: gen, train, decode, eval, verify.

Settings come from an optional INI file (``--config``) with sections
``[data]``, ``[model]``, ``[train]``, ``[decode]`` and ``[eval]``; keys are the
long flag names with dashes replaced by underscores. Flags given on the
command line override file values. Every command that writes to ``--out``
also writes the effective settings there as ``effective_config.ini``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

log = logging.getLogger("monoattn")


class Settings:
    """Flag > config file > default lookup, recording what was used."""

    def __init__(self, args: argparse.Namespace, config_path: str | None):
        self.args = args
        self.file = configparser.ConfigParser()
        if config_path:
            if not Path(config_path).is_file():
                raise FileNotFoundError(f"config file not found: {config_path}")
            self.file.read(config_path)
        self.used: dict[str, dict[str, str]] = {}

    def get(self, section: str, key: str, default=None, conv=str):
        value = getattr(self.args, key, None)
        if value is None and self.file.has_option(section, key):
            raw = self.file.get(section, key)
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ValueError(f"[{section}] {key} = {raw!r}: {exc}") from None
        if value is None:
            value = default
        self.used.setdefault(section, {})[key] = "none" if value is None else str(value)
        return value

    def write(self, out_dir: Path) -> None:
        cp = configparser.ConfigParser()
        for section, values in self.used.items():
            cp[section] = values
        with open(out_dir / "effective_config.ini", "w") as fh:
            cp.write(fh)


# "offline" has to survive the flag/file/default lookup, where None means unset
OFFLINE = "inf"


def chunk_arg(text: str) -> int | str:
    """``N`` or ``inf`` (offline, returned as ``OFFLINE``)."""
    if str(text).lower() in ("inf", "none", "offline"):
        return OFFLINE
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("chunk must be a positive integer or 'inf'")
    return n


def _chunk_conv(text: str):
    try:
        return chunk_arg(text)
    except argparse.ArgumentTypeError as exc:
        raise ValueError(str(exc)) from None


def _get_chunk(settings: Settings, section: str, default) -> int | None:
    value = settings.get(section, "chunk", OFFLINE if default is None else default, _chunk_conv)
    return None if value == OFFLINE else value


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _out_dir(settings: Settings) -> Path:
    out = Path(settings.get("io", "out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_config(settings: Settings, base=None):
    from .model import ModelConfig

    values = asdict(base) if base is not None else {}
    flag_names = {"decision_step": "decision_step", "lookahead_chunks": "lookahead"}
    kwargs = {}
    for f in fields(ModelConfig):
        key = flag_names.get(f.name, f.name)
        conv = _bool if f.name == "cross_attention" else int
        default = values.get(f.name, f.default)
        v = settings.get("model", key, default, conv)
        kwargs[f.name] = v
    return ModelConfig(**kwargs)


# -- commands ------------------------------------------------------------------


def cmd_gen(args, settings: Settings) -> int:
    from .synthesis import SyntheticTaskSpec, generate_corpus

    spec = SyntheticTaskSpec(
        task=settings.get("data", "task", "copy"),
        vocab_size=settings.get("data", "vocab_size", 16, int),
        min_len=settings.get("data", "min_len", 6, int),
        max_len=settings.get("data", "max_len", 12, int),
        reorder_window=settings.get("data", "window", 3, int),
        reorder_prob=settings.get("data", "reorder_prob", 0.5, float),
        block_size=settings.get("data", "block_size", 4, int),
        seed=settings.get("data", "seed", 0, int),
        rule_seed=settings.get("data", "rule_seed", 0, int),
    )
    n = settings.get("data", "n", 1000, int)
    name = settings.get("data", "name", "corpus")
    out = _out_dir(settings)
    samples = generate_corpus(spec, n, out / f"{name}.txt")
    settings.write(out)
    counts = [s.cross_count for s in samples]
    print(f"wrote {len(samples)} samples to {out / (name + '.txt')} "
          f"(mean cross count {np.mean(counts):.2f})")
    return 0


def _read_pairs(path):
    from .synthesis import read_corpus

    if not path:
        raise ValueError("--data is required")
    samples = read_corpus(path)
    if not samples:
        raise ValueError(f"no samples in {path}")
    return samples


def cmd_train(args, settings: Settings) -> int:
    from .model import MonoAttnTransducer
    from .nn import AdamConfig
    from .training import TrainConfig, train

    samples = _read_pairs(settings.get("train", "data"))
    mode = settings.get("train", "mode", "offline")
    chunk = _get_chunk(settings, "train", None if mode == "offline" else 4)
    if mode != "offline" and chunk is None:
        raise ValueError(f"--mode {mode} needs a finite --chunk")
    init = settings.get("train", "init")
    if init:
        from .model import ModelConfig
        from .nn import load_checkpoint

        _, meta = load_checkpoint(init)
        mcfg = _model_config(settings, ModelConfig.from_text(meta))
    else:
        mcfg = _model_config(settings)
    if chunk is not None:
        from dataclasses import replace

        mcfg = replace(mcfg, chunk_frames=chunk)
    opt = AdamConfig(peak_lr=settings.get("train", "peak_lr", 1e-3, float),
                     warmup_steps=settings.get("train", "warmup_steps", 400, int),
                     weight_decay=settings.get("train", "weight_decay", 0.01, float),
                     clip_norm=settings.get("train", "clip_norm", 5.0, float))
    tcfg = TrainConfig(mode=mode, prior=settings.get("train", "prior", "diagonal"),
                       chunk_frames=chunk, steps=settings.get("train", "steps", 2000, int),
                       batch_size=settings.get("train", "batch_size", 16, int),
                       seed=settings.get("train", "seed", 0, int),
                       log_every=settings.get("train", "log_every", 100, int), optimizer=opt)
    model = MonoAttnTransducer(mcfg)
    if init:
        model.load_parameters(init)
    out = _out_dir(settings)
    settings.write(out)
    pairs = [(s.source, s.target) for s in samples]
    records = train(model, pairs, tcfg, log_path=out / "train_log.jsonl")
    model.save(out / "model.ckpt")
    last = records[-1] if records else {}
    print(f"trained {len(records)} steps ({mode}); final loss {last.get('loss', float('nan')):.4f}; "
          f"fallbacks {last.get('fallbacks', 0)}; checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_decode(args, settings: Settings) -> int:
    from dataclasses import replace

    from .decoding import DecodePolicyConfig, decode_record, stream_decode, write_decode_records
    from .model import MonoAttnTransducer

    ckpt = settings.get("decode", "checkpoint")
    if not ckpt:
        raise ValueError("--checkpoint is required")
    model = MonoAttnTransducer.load(ckpt)
    samples = _read_pairs(settings.get("decode", "data"))
    chunk = _get_chunk(settings, "decode", model.config.chunk_frames)
    ds = settings.get("decode", "decision_step", model.config.decision_step, int)
    la = settings.get("decode", "lookahead", model.config.lookahead_chunks, int)
    cfg = replace(model.config, decision_step=ds, lookahead_chunks=la,
                  chunk_frames=chunk if chunk is not None else model.config.chunk_frames)
    if cfg != model.config:
        tuned = MonoAttnTransducer(cfg)
        tuned.store.load_state_dict(model.store.state_dict())
        model = tuned
    policy = DecodePolicyConfig(chunk_frames=chunk,
                                max_writes_per_step=settings.get("decode", "max_writes", 10, int),
                                record_time=settings.get("decode", "record_time", False, _bool))
    limit = settings.get("decode", "limit", None, int)
    out = _out_dir(settings)
    settings.write(out)
    records = []
    for i, s in enumerate(samples[:limit] if limit else samples):
        res = stream_decode(s.source, model, policy)
        rec = decode_record(i, s.source, res, s.target)
        rec["alignment"] = [list(p) for p in s.alignment]
        records.append(rec)
    write_decode_records(out / "decode.jsonl", records)
    acc = sum(sum(int(a == b) for a, b in zip(r["hypothesis"], r["reference"])) for r in records)
    total = sum(len(r["reference"]) for r in records)
    print(f"decoded {len(records)} samples; token accuracy {acc / max(total, 1):.4f}; "
          f"traces in {out / 'decode.jsonl'}")
    return 0


def cmd_eval(args, settings: Settings) -> int:
    from .decoding import read_decode_records
    from .evaluation import assign_subsets, score_records, summarize, write_rows_csv, write_summary
    from .synthesis import SyntheticSample

    path = settings.get("eval", "decodes")
    if not path:
        raise ValueError("--decodes is required")
    records = read_decode_records(path)
    data = settings.get("eval", "data")
    samples = None
    if data:
        samples = _read_pairs(data)
    elif records and all("alignment" in r and "reference" in r for r in records):
        samples = {r["id"]: SyntheticSample(np.array(r["source"]), np.array(r["reference"]),
                                            [tuple(p) for p in r["alignment"]]) for r in records}
    frame_ms = settings.get("eval", "frame_ms", None, float)
    rows = score_records(records, samples, frame_ms)
    assign_subsets(rows)
    summary = summarize(rows)
    out = _out_dir(settings)
    settings.write(out)
    write_rows_csv(out / "metrics.csv", rows)
    write_summary(out / "summary.json", summary)
    a = summary["all"]

    def fmt(v):
        return "n/a" if v is None else f"{v:.4f}"

    print(f"n={a['n']} accuracy={fmt(a['accuracy'])} AL={fmt(a['AL'])} LAAL={fmt(a['LAAL'])} "
          f"AP={fmt(a['AP'])} DAL={fmt(a['DAL'])}")
    for scheme in ("tercile", "fixed"):
        if scheme in summary:
            parts = " ".join(f"{k}={fmt(v['accuracy'])}(n={v['n']})" for k, v in summary[scheme].items())
            print(f"  {scheme}: {parts}")
    return 0


def cmd_verify(args, settings: Settings) -> int:
    from .verify import SUITES, run_all

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}; choose from {list(SUITES)}")
    results = run_all(names)
    for r in results:
        print(r.line())
        for f in r.failures[:10]:
            print(f"    {f}")
    if args.out:
        out = _out_dir(settings)
        (out / "verify.json").write_text(json.dumps([asdict(r) for r in results], indent=2))
    return 0 if all(r.passed for r in results) else 1


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monoattn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="INI file with default settings")
        sp.add_argument("--out", help="output directory")
        if seed:
            sp.add_argument("--seed", type=int)
        return sp

    g = common(sub.add_parser("gen", help="generate a synthetic corpus"))
    g.add_argument("--task", choices=["copy", "local_reorder", "block_reverse"])
    g.add_argument("--n", type=int, help="number of samples")
    g.add_argument("--name", help="corpus file stem (default: corpus)")
    g.add_argument("--vocab-size", dest="vocab_size", type=int)
    g.add_argument("--min-len", dest="min_len", type=int)
    g.add_argument("--max-len", dest="max_len", type=int)
    g.add_argument("--window", type=int, help="local_reorder maximum displacement")
    g.add_argument("--reorder-prob", dest="reorder_prob", type=float)
    g.add_argument("--block-size", dest="block_size", type=int)
    g.add_argument("--rule-seed", dest="rule_seed", type=int,
                   help="seed of the relabelling/reordering rule shared by train and test")

    t = common(sub.add_parser("train", help="train a model"))
    t.add_argument("--data", help="corpus file")
    t.add_argument("--mode", choices=["offline", "posterior", "prior"])
    t.add_argument("--prior", choices=["uniform", "diagonal"])
    t.add_argument("--chunk", type=chunk_arg, help="source tokens per chunk, or 'inf'")
    t.add_argument("--decision-step", dest="decision_step", type=int)
    t.add_argument("--lookahead", type=int, choices=[0, 1])
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--peak-lr", dest="peak_lr", type=float)
    t.add_argument("--init", help="checkpoint to start from (e.g. an offline pretrain)")
    t.add_argument("--no-cross-attention", dest="cross_attention", action="store_const", const=False,
                   help="plain Transducer baseline")

    d = common(sub.add_parser("decode", help="streaming greedy decoding with traces"), seed=False)
    d.add_argument("--checkpoint")
    d.add_argument("--data", help="corpus file")
    d.add_argument("--chunk", type=chunk_arg, help="source tokens per chunk, or 'inf'")
    d.add_argument("--decision-step", dest="decision_step", type=int)
    d.add_argument("--lookahead", type=int, choices=[0, 1])
    d.add_argument("--max-writes", dest="max_writes", type=int)
    d.add_argument("--limit", type=int, help="decode only the first N samples")
    d.add_argument("--record-time", dest="record_time", action="store_const", const=True,
                   help="stamp events for computation-aware latency")

    e = common(sub.add_parser("eval", help="score decode traces"), seed=False)
    e.add_argument("--decodes", help="decode.jsonl from the decode command")
    e.add_argument("--data", help="corpus file with references and gold alignments")
    e.add_argument("--frame-ms", dest="frame_ms", type=float, help="report latencies in ms")

    v = sub.add_parser("verify", help="run the oracle suites")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    v.add_argument("--out", help="write verify.json here")
    v.add_argument("--config", help=argparse.SUPPRESS)
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "decode": cmd_decode, "eval": cmd_eval,
            "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        settings = Settings(args, getattr(args, "config", None))
        return COMMANDS[args.command](args, settings)
    except (ValueError, KeyError, OSError, configparser.Error) as exc:
        print(f"monoattn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
