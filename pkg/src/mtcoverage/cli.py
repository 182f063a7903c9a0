"""Command-line entry point.

Subcommands: ``spans`` (dump candidate spans), ``detect`` (omission and/or
addition detection), ``synth`` (synthetic coverage-error dataset), ``eval``
(segment P/R/F1 and word-level MCC), ``stats`` (dataset counts), ``serve``
(human-review service), ``bench`` (score-count and timing accounting).
Machine output is newline-delimited JSON; ``--pretty`` switches the few
table-like reports to human-readable text. Exit codes: 0 success, 1 input
or usage error, 2 backend error.
"""
from __future__ import annotations

import argparse
import json
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import conllu, detector, evalkit, review, scoring, spans, synthgen

BACKEND_ENV_VAR = "MTCOVERAGE_BACKEND"


class _Parser(argparse.ArgumentParser):
    # Usage problems are input errors: exit 1, not argparse's default 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class CliInputError(ValueError):
    pass


def _open_out(path: str | None):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def _apply_config(args: argparse.Namespace, argv: list[str]) -> None:
    """Fill in flags from a JSON config file; flags given on argv win."""
    if not getattr(args, "config", None):
        return
    with open(args.config, encoding="utf-8") as fh:
        config = json.load(fh)
    given = {
        tok.split("=", 1)[0].lstrip("-").replace("-", "_")
        for tok in argv
        if tok.startswith("--")
    }
    for key, value in config.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and attr not in given:
            setattr(args, attr, value)


def _pos_config(args: argparse.Namespace) -> spans.PosConfig:
    if getattr(args, "pos_file", None):
        cfg = spans.PosConfig.from_file(args.pos_file)
    else:
        cfg = spans.PosConfig()
    if getattr(args, "pos", None):
        cfg = spans.PosConfig(frozenset(args.pos.replace(",", " ").split()))
    return cfg


def _load_sentences(path: str) -> list[conllu.DepSentence]:
    with open(path, encoding="utf-8") as fh:
        return conllu.parse_conllu(fh)


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _parse_backend_spec(spec: str, direction: scoring.Direction):
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise CliInputError(
            f"backend spec {spec!r} must look like lexicon:FILE, cmd:COMMAND or tcp:HOST:PORT"
        )
    if kind == "lexicon":
        return scoring.LexiconScorer.from_file(rest, direction=direction)
    if kind == "cmd":
        return scoring.ServiceScorer.spawn(rest, direction=direction)
    if kind == "tcp":
        host, sep, port = rest.rpartition(":")
        if not sep:
            raise CliInputError(f"tcp backend spec {spec!r} must be tcp:HOST:PORT")
        return scoring.ServiceScorer.connect(host, int(port), direction=direction)
    raise CliInputError(f"unknown backend kind {kind!r}")


def _parse_translator_spec(spec: str, direction: scoring.Direction):
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise CliInputError(
            f"translator spec {spec!r} must look like tsv:FILE, subst:FILE, "
            "cmd:COMMAND or tcp:HOST:PORT"
        )
    if kind == "tsv":
        return synthgen.TsvTranslator.from_file(rest)
    if kind == "subst":
        with open(rest, encoding="utf-8") as fh:
            return synthgen.WordSubstitutionTranslator(json.load(fh))
    if kind == "cmd":
        return synthgen.ServiceTranslator.spawn(rest, direction)
    if kind == "tcp":
        host, sep, port = rest.rpartition(":")
        if not sep:
            raise CliInputError(f"tcp translator spec {spec!r} must be tcp:HOST:PORT")
        return synthgen.ServiceTranslator.connect(host, int(port), direction)
    raise CliInputError(f"unknown translator kind {kind!r}")


def _add_pos_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pos", help="comma-separated UPOS tags of interest (overrides --pos-file)")
    parser.add_argument("--pos-file", help="file with one UPOS tag of interest per line")


def _add_detect_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--direction", choices=("omission", "addition", "both"), default="both")
    parser.add_argument("--src-conllu", help="parsed source sentences (CoNLL-U)")
    parser.add_argument("--tgt-conllu", help="parsed translations (CoNLL-U)")
    parser.add_argument("--translations", help="raw translations, one per line (omission-only runs)")
    parser.add_argument("--sources", help="raw sources, one per line (addition-only runs)")
    parser.add_argument("--backend", help="forward scorer: lexicon:FILE | cmd:COMMAND | tcp:HOST:PORT "
                                          f"(default ${BACKEND_ENV_VAR})")
    parser.add_argument("--reverse-backend",
                        help="reverse-direction scorer; defaults to the inverted lexicon when "
                             "the forward backend is a lexicon")
    parser.add_argument("--src-lang", default="en")
    parser.add_argument("--tgt-lang", default="de")
    parser.add_argument("--margin", type=float, default=0.0)
    parser.add_argument("--overlap-policy", choices=("report_all", "maximal_delta_nonoverlapping"),
                        default="report_all")
    parser.add_argument("--token-level", action="store_true",
                        help="ablation: delete single tokens instead of subtree spans")
    parser.add_argument("--jobs", type=int, default=0,
                        help="concurrent segments (0 = number of CPUs)")
    _add_pos_flags(parser)
    parser.add_argument("--out", help="output path (default stdout)")


def _detect_setup(args):
    modes = ("omission", "addition") if args.direction == "both" else (args.direction,)
    direction = scoring.Direction(args.src_lang, args.tgt_lang)

    src_sents = _load_sentences(args.src_conllu) if args.src_conllu else None
    tgt_sents = _load_sentences(args.tgt_conllu) if args.tgt_conllu else None
    translations = _read_lines(args.translations) if args.translations else None
    sources = _read_lines(args.sources) if args.sources else None

    if "omission" in modes:
        if src_sents is None:
            raise CliInputError("omission detection requires --src-conllu")
        if tgt_sents is None and translations is None:
            raise CliInputError("omission detection requires --tgt-conllu or --translations")
    if "addition" in modes:
        if tgt_sents is None:
            raise CliInputError("addition detection requires --tgt-conllu")
        if src_sents is None and sources is None:
            raise CliInputError("addition detection requires --src-conllu or --sources")

    lengths = {
        name: len(x)
        for name, x in (
            ("--src-conllu", src_sents),
            ("--tgt-conllu", tgt_sents),
            ("--translations", translations),
            ("--sources", sources),
        )
        if x is not None
    }
    if len(set(lengths.values())) > 1:
        raise CliInputError(f"input lengths disagree: {lengths}")
    n = next(iter(lengths.values()))

    pairs = []
    for i in range(n):
        src = src_sents[i] if src_sents else None
        tgt = tgt_sents[i] if tgt_sents else None
        seg_id = src.sent_id if src is not None else tgt.sent_id
        pairs.append(
            detector.SegmentPair(
                seg_id=seg_id,
                source=src,
                translation=tgt,
                source_text=sources[i] if sources else None,
                translation_text=translations[i] if translations else None,
            )
        )

    backend_spec = args.backend or os.environ.get(BACKEND_ENV_VAR)
    if not backend_spec:
        raise CliInputError(f"--backend is required (or set ${BACKEND_ENV_VAR})")
    forward = reverse = None
    if "omission" in modes or args.reverse_backend is None:
        forward = scoring.CachingScorer(_parse_backend_spec(backend_spec, direction))
    if "addition" in modes:
        if args.reverse_backend:
            reverse = scoring.CachingScorer(
                _parse_backend_spec(args.reverse_backend, direction.swapped())
            )
        elif isinstance(forward.inner, scoring.LexiconScorer):
            reverse = scoring.CachingScorer(forward.inner.inverted())
        else:
            raise CliInputError("addition detection over a service requires --reverse-backend")
    backends = detector.BackendPair(forward=forward, reverse=reverse)

    cfg = detector.DetectorConfig(
        margin=args.margin,
        overlap_policy=args.overlap_policy,
        pos=_pos_config(args),
        token_level=args.token_level,
    )
    return pairs, backends, cfg, modes


def _run_detection(args):
    pairs, backends, cfg, modes = _detect_setup(args)
    jobs = args.jobs or os.cpu_count() or 1

    def work(pair):
        return detector.detect(pair, backends, cfg, modes)

    if jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(pair) for pair in pairs]
    return pairs, results


def _cmd_spans(args) -> int:
    sentences = _load_sentences(args.conllu)
    pos_cfg = _pos_config(args)
    out = _open_out(args.out)
    for sentence in sentences:
        if args.token_level:
            candidates = spans.token_level_spans(sentence)
        else:
            candidates = spans.extract_spans(sentence, pos_cfg)
        record = {
            "sent_id": sentence.sent_id,
            "text": conllu.reconstruct_text(sentence),
            "candidates": [
                {
                    "head_id": c.head_id,
                    "token_ids": sorted(c.token_ids),
                    "char_range": list(c.char_range),
                    "text": c.text,
                }
                for c in candidates
            ],
        }
        if args.pretty:
            out.write(f"# {sentence.sent_id}: {record['text']}\n")
            for cand in record["candidates"]:
                out.write(f"  [{cand['char_range'][0]:>3},{cand['char_range'][1]:>3})  {cand['text']}\n")
        else:
            out.write(_dump(record) + "\n")
    if out is not sys.stdout:
        out.close()
    return 0


def _cmd_detect(args) -> int:
    pairs, results = _run_detection(args)
    out = _open_out(args.out)
    for pair, result in zip(pairs, results):
        out.write(_dump(detector.result_to_record(result, pair)) + "\n")
    if out is not sys.stdout:
        out.close()
    return 0


def _cmd_bench(args) -> int:
    pairs, results = _run_detection(args)
    per_segment = [
        {
            "segment_id": r.seg_id,
            "score_calls": r.score_calls,
            "wall_time_ms": r.wall_time * 1000.0,
            "detections": len(r.detections),
        }
        for r in results
    ]
    n = len(results) or 1
    report = {
        "segments": len(results),
        "total_score_calls": sum(r.score_calls for r in results),
        "mean_score_calls": sum(r.score_calls for r in results) / n,
        "mean_wall_time_ms": sum(r.wall_time for r in results) * 1000.0 / n,
        "per_segment": per_segment,
    }
    out = _open_out(args.out)
    if args.pretty:
        out.write(f"segments          {report['segments']}\n")
        out.write(f"total score calls {report['total_score_calls']}\n")
        out.write(f"mean score calls  {report['mean_score_calls']:.2f}\n")
        out.write(f"mean wall time    {report['mean_wall_time_ms']:.2f} ms\n")
    else:
        out.write(_dump(report) + "\n")
    if out is not sys.stdout:
        out.close()
    return 0


def _cmd_synth(args) -> int:
    sentences = _load_sentences(args.conllu)
    direction = scoring.Direction(args.src_lang, args.tgt_lang)
    translator = _parse_translator_spec(args.translator, direction)
    cfg = synthgen.GenConfig(
        deletion_prob=args.deletion_prob,
        seed=args.seed,
        src_lang=args.src_lang,
        tgt_lang=args.tgt_lang,
    )
    samples = synthgen.generate(sentences, translator, cfg, _pos_config(args))
    out = _open_out(args.out)
    synthgen.write_samples_jsonl(samples, out)
    if out is not sys.stdout:
        out.close()
    if args.labels_prefix:
        for side, lang in (("src", args.src_lang), ("tgt", args.tgt_lang)):
            path = f"{args.labels_prefix}.{side}"
            with open(path, "w", encoding="utf-8") as fh:
                synthgen.write_label_file(samples, side, cfg.mode_for(lang), fh)
    return 0


def _cmd_stats(args) -> int:
    with open(args.samples, encoding="utf-8") as fh:
        samples = synthgen.read_samples_jsonl(fh)
    stats = synthgen.dataset_stats(samples)
    out = _open_out(args.out)
    if args.pretty:
        out.write(f"segments total         {stats.segments_total}\n")
        out.write(f"segments with addition {stats.segments_with_addition}\n")
        out.write(f"segments with omission {stats.segments_with_omission}\n")
        out.write(f"src tokens OK/BAD      {stats.src_ok}/{stats.src_bad}\n")
        out.write(f"tgt tokens OK/BAD      {stats.tgt_ok}/{stats.tgt_bad}\n")
    else:
        out.write(_dump(stats.as_dict()) + "\n")
    if out is not sys.stdout:
        out.close()
    return 0


def _read_label_sequences(path: str) -> list[evalkit.LabelSequence]:
    sequences = []
    for line in _read_lines(path):
        if not line.strip():
            continue
        tokens, labels = synthgen.read_label_file_line(line)
        sequences.append(evalkit.LabelSequence(tuple(tokens), tuple(labels)))
    return sequences


def _cmd_eval(args) -> int:
    segments = evalkit.load_gold(args.gold)
    systems = sorted({seg.system for seg in segments})
    if args.system:
        segments = [seg for seg in segments if seg.system == args.system]
        if not segments:
            raise CliInputError(f"system {args.system!r} not in gold file (has {systems})")
    elif len(systems) > 1:
        raise CliInputError(f"gold file covers several systems {systems}; pick one with --system")

    rules = evalkit.FilterRules(
        max_marks=args.max_marks,
        drop_multisentence=not args.keep_multisentence,
    )
    kept, dropped = evalkit.filter_segments(segments, rules)

    report: dict = {
        "segments": {
            "total": len(segments),
            "kept": len(kept),
            "dropped": [
                {"system": seg.system, "seg_id": seg.seg_id, "reason": reason}
                for seg, reason in dropped
            ],
        }
    }

    if args.preds:
        flags = evalkit.load_predictions(args.preds)
        segment_level = {}
        for kind, category in evalkit.CATEGORY_FOR_KIND.items():
            preds = {seg.key: kind in flags.get(seg.seg_id, set()) for seg in kept}
            prf = evalkit.segment_prf(preds, kept, category)
            segment_level[kind] = {
                "category": category,
                "precision": prf.precision,
                "recall": prf.recall,
                "f1": prf.f1,
                "tp": prf.tp, "fp": prf.fp, "fn": prf.fn, "tn": prf.tn,
            }
        report["segment_level"] = segment_level

    word_level = {}
    for side in ("src", "tgt"):
        pred_path = getattr(args, f"pred_{side}_labels")
        gold_path = getattr(args, f"gold_{side}_labels")
        if pred_path and gold_path:
            word_level[f"{side}_mcc"] = evalkit.word_mcc(
                _read_label_sequences(pred_path), _read_label_sequences(gold_path)
            )
        elif pred_path or gold_path:
            raise CliInputError(f"both --pred-{side}-labels and --gold-{side}-labels are needed")
    if word_level:
        report["word_level"] = word_level

    out = _open_out(args.out)
    out.write(_dump(report) + "\n")
    if out is not sys.stdout:
        out.close()
    return 0


def _cmd_serve(args) -> int:
    if args.build_from:
        if Path(args.session).exists() and not args.force:
            raise CliInputError(
                f"session file {args.session} already exists; --force to overwrite"
            )
        if not args.raters or len(args.raters.split(",")) != 2:
            raise CliInputError("--raters A,B (exactly two) is required to build a session")
        raters = tuple(args.raters.split(","))
        with open(args.build_from, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        sampling = review.SamplingConfig(
            sample_size=args.sample_size or len(review._prediction_groups(records)),
            raters=raters,  # type: ignore[arg-type]
            overlap_fraction=args.overlap,
            seed=args.seed,
        )
        tasks = review.build_tasks(records, sampling, random.Random(args.seed))
        with open(args.session, "w", encoding="utf-8") as fh:
            review.write_session(tasks, raters, fh)
        print(f"wrote {len(tasks)} tasks to {args.session}", file=sys.stderr)
        if args.build_only:
            return 0

    taxonomy = review.Taxonomy.from_file(args.taxonomy) if args.taxonomy else None
    server = review.serve(
        args.session,
        args.answers,
        host=args.host,
        port=args.port,
        taxonomy=taxonomy,
        ui_dir=args.ui_dir,
    )
    host, port = server.server_address[:2]
    print(f"review service listening on http://{host}:{port}/", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="mtcoverage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_spans = sub.add_parser("spans",
                             help="dump candidate error spans per sentence")
    p_spans.add_argument("--conllu", required=True)
    p_spans.add_argument("--token-level", action="store_true")
    _add_pos_flags(p_spans)
    p_spans.add_argument("--pretty", action="store_true")
    p_spans.add_argument("--out")
    p_spans.add_argument("--config")
    p_spans.set_defaults(func=_cmd_spans)

    p_detect = sub.add_parser("detect",
                              help="detect omissions and/or additions")
    _add_detect_flags(p_detect)
    p_detect.add_argument("--config")
    p_detect.set_defaults(func=_cmd_detect)

    p_bench = sub.add_parser("bench",
                             help="report score counts and timings per segment")
    _add_detect_flags(p_bench)
    p_bench.add_argument("--pretty", action="store_true")
    p_bench.add_argument("--config")
    p_bench.set_defaults(func=_cmd_bench)

    p_synth = sub.add_parser("synth",
                             help="generate synthetic coverage errors with OK/BAD labels")
    p_synth.add_argument("--conllu", required=True)
    p_synth.add_argument("--translator", required=True,
                         help="tsv:FILE | subst:FILE | cmd:COMMAND | tcp:HOST:PORT")
    p_synth.add_argument("--src-lang", default="en")
    p_synth.add_argument("--tgt-lang", default="de")
    p_synth.add_argument("--deletion-prob", type=float, default=0.15)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--labels-prefix",
                         help="also write word-level label files PREFIX.src and PREFIX.tgt")
    _add_pos_flags(p_synth)
    p_synth.add_argument("--out")
    p_synth.add_argument("--config")
    p_synth.set_defaults(func=_cmd_synth)

    p_stats = sub.add_parser("stats",
                             help="count segments and OK/BAD tokens in a dataset")
    p_stats.add_argument("--samples", required=True)
    p_stats.add_argument("--pretty", action="store_true")
    p_stats.add_argument("--out")
    p_stats.add_argument("--config")
    p_stats.set_defaults(func=_cmd_stats)

    p_eval = sub.add_parser("eval",
                            help="score predictions against gold annotations")
    p_eval.add_argument("--gold", required=True, help="tab-separated annotation file")
    p_eval.add_argument("--preds", help="detection results (JSON lines)")
    p_eval.add_argument("--system", help="gold system id to evaluate against")
    p_eval.add_argument("--max-marks", type=int, default=5)
    p_eval.add_argument("--keep-multisentence", action="store_true")
    p_eval.add_argument("--pred-src-labels")
    p_eval.add_argument("--gold-src-labels")
    p_eval.add_argument("--pred-tgt-labels")
    p_eval.add_argument("--gold-tgt-labels")
    p_eval.add_argument("--out")
    p_eval.add_argument("--config")
    p_eval.set_defaults(func=_cmd_eval)

    p_serve = sub.add_parser("serve",
                             help="serve review tasks to raters over HTTP")
    p_serve.add_argument("--session", required=True)
    p_serve.add_argument("--answers", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.add_argument("--taxonomy", help="JSON file overriding the answer taxonomy")
    p_serve.add_argument("--ui-dir", help="directory of built UI assets to host")
    p_serve.add_argument("--build-from", help="detection results to sample a new session from")
    p_serve.add_argument("--sample-size", type=int, default=0,
                         help="tasks to sample (default: all predictions)")
    p_serve.add_argument("--raters", help="two rater ids, comma separated")
    p_serve.add_argument("--overlap", type=float, default=0.0,
                         help="fraction of tasks assigned to both raters")
    p_serve.add_argument("--seed", type=int, default=0)
    p_serve.add_argument("--build-only", action="store_true")
    p_serve.add_argument("--force", action="store_true")
    p_serve.add_argument("--config")
    p_serve.set_defaults(func=_cmd_serve)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config(args, argv)
        return args.func(args)
    except (scoring.ScoreError, detector.DetectionError) as exc:
        print(f"mtcoverage: backend error: {exc}", file=sys.stderr)
        return 2
    except (
        CliInputError,
        conllu.ConlluParseError,
        evalkit.GoldFormatError,
        evalkit.KeyMismatchError,
        detector.MissingParseError,
        synthgen.TranslationMissingError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"mtcoverage: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
