"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 validation or infeasibility failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional


from . import checks, data_io, models, seq_ops, training, trellis
from .core_types import TrainConfig, ValidationError
from .data_io import CorpusFormatError

EXIT_OK, EXIT_USAGE, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def _load_items(path: str):
    try:
        return data_io.load_corpus(path)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    if value.lower() in ("none", "null"):
        return None
    return value


def _overrides(pairs: List[str]) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = _coerce(v.strip())
    return out


def _load_ckpt(path: str):
    d = _read_json(path)
    cfg = TrainConfig.from_dict(d["config"])
    _, params = models.params_from_dict(d["params"])
    return cfg, params


def cmd_gen_data(args) -> int:
    spec = data_io.CorpusSpec.from_dict(_read_json(args.spec)) if args.spec else data_io.CorpusSpec()
    corpus = data_io.gen_corpus(spec, args.seed)
    data_io.save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} items to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    items = _load_items(args.corpus)
    if not items:
        raise ValidationError("corpus is empty")
    base = _read_json(args.config) if args.config else {
        "O": int(items[0].frames.shape[1]),
        "V": max(8, 1 + max(max(it.tokens) for it in items)),
    }
    base.update(_overrides(args.set))
    if args.seed is not None:
        base["seed"] = args.seed
    cfg = TrainConfig.from_dict(base)
    if any(it.frames.shape[1] != cfg.O for it in items):
        raise ValidationError(f"corpus frame dimension differs from config O={cfg.O}")
    if any(max(it.tokens) >= cfg.V for it in items):
        raise ValidationError(f"corpus token id exceeds config V={cfg.V}")

    log_fh = open(args.log, "w") if args.log else None
    try:
        def on_step(rec):
            if log_fh is not None:
                log_fh.write(json.dumps(rec) + "\n")

        res = training.train(items, cfg, on_step=on_step)
    finally:
        if log_fh is not None:
            log_fh.close()
    spec = models.ModelSpec.from_config(cfg)
    _write_json(args.out, {"config": cfg.to_dict(),
                           "params": models.params_to_dict(spec, res.params),
                           "optimizer": res.state.to_dict()})
    if res.history:
        last = res.history[-1]
        print(f"trained {len(res.history)} steps; final total {last['total']:.4f}")
    return EXIT_OK


def cmd_align(args) -> int:
    items = _load_items(args.corpus)
    cfg, params = _load_ckpt(args.ckpt)
    preds, truths = [], []
    with open(args.out, "w") as fh:
        for i, it in enumerate(items):
            sf = seq_ops.group_frames(it.frames, cfg.g)
            em, _ = models.acoustic_encoder(params, sf.frames)
            a, score = trellis.viterbi_best(em, it.tokens, cfg.K)
            l = trellis.alignment_to_duration(a)
            nbest = trellis.nbest_beam(em, it.tokens, cfg.K, cfg.beam_infer)
            preds.append(l.durations)
            truths.append(it.true_durations)
            fh.write(json.dumps({
                "item": i, "durations": list(l.durations), "log_score": score,
                "nbest": [[list(d.durations), s] for d, s in nbest],
                "true_durations": list(it.true_durations),
            }) + "\n")
    acc = training.duration_accuracy(preds, truths)
    print(json.dumps({"items": len(items), "duration_accuracy": acc}))
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg, params = _load_ckpt(args.ckpt)
    try:
        tokens = [int(t) for t in args.tokens.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"--tokens must be integers, got {args.tokens!r}") from None
    if not tokens:
        raise UsageError("--tokens is empty")
    if min(tokens) < 0 or max(tokens) >= cfg.V:
        raise ValidationError(f"token ids must lie in 0..{cfg.V - 1}")
    l = training.infer_durations(tokens, params, cfg)
    frames = training.synthesize(tokens, params, cfg, durations=l)
    _write_json(args.out, {"tokens": tokens, "durations": list(l.durations), "g": cfg.g,
                           "dims": list(frames.shape), "frames": [float(v) for v in frames.ravel()]})
    print(f"wrote {frames.shape[0]} frames (durations {list(l.durations)})")
    return EXIT_OK


def cmd_dump_trellis(args) -> int:
    items = _load_items(args.corpus)
    if not 0 <= args.item < len(items):
        raise UsageError(f"--item must be in 0..{len(items) - 1}")
    cfg, params = _load_ckpt(args.ckpt)
    it = items[args.item]
    sf = seq_ops.group_frames(it.frames, cfg.g)
    em, _ = models.acoustic_encoder(params, sf.frames)
    tr = trellis.forward_backward(em, it.tokens, cfg.K)
    out = trellis.trellis_to_dict(tr)
    out["log_marginal"] = trellis.log_marginal(tr)
    _write_json(args.out, out)
    print(f"wrote trellis {tr.T}x{tr.U}x{tr.K} to {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = checks.run_all()
    print(checks.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latentdur", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="generate a synthetic corpus")
    s.add_argument("--spec", help="corpus spec JSON (defaults built in)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="jointly train all components")
    s.add_argument("--corpus", required=True)
    s.add_argument("--config", help="TrainConfig JSON")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scalar config field")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="JSON-lines training log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("align", help="Viterbi durations and accuracy against ground truth")
    s.add_argument("--corpus", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("synthesize", help="prior durations + free-running decoder")
    s.add_argument("--tokens", required=True, help='space-separated token ids, e.g. "3 1 4 1"')
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("dump-trellis", help="export forward/backward tables for one item")
    s.add_argument("--item", type=int, required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dump_trellis)

    s = sub.add_parser("check", help="run the invariant, gradient and oracle suite")
    s.set_defaults(func=cmd_check)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits on usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"latentdur: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, CorpusFormatError, KeyError, TypeError) as exc:
        print(f"latentdur: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
