"""Command-line entry point.

Every subcommand that runs an experiment accepts ``--config FILE`` plus one
``--<key>`` flag per configuration key, which overrides the file. Exit codes:
0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import fusion, kge, pipeline
from .composite import FactIndex, composite_answer, prune_facts
from .errors import DataError, NumericalError
from .kg import OcclusionSpec, load_kg, load_qa_facts, occlude, save_kg
from .qadata import QAInstance
from .results import append_row
from .synth import FILES, SynthConfig, check_corpus, generate_synthetic, write_corpus
from .text import tokenize

log = logging.getLogger("kgvqa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    for f in fields(pipeline.ExperimentConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar=f.name.upper())


def _config(args) -> pipeline.ExperimentConfig:
    overrides = [f"{k[4:]}={v}" for k, v in vars(args).items() if k.startswith("cfg_") and v is not None]
    if args.config:
        return pipeline.load_config(args.config, overrides)
    return pipeline.ExperimentConfig(**pipeline.parse_overrides(overrides))


def _print_rows(rows):
    for r in rows:
        print(json.dumps({k: v for k, v in r.items() if v != ""}, default=str))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    values = {f.name: getattr(args, "syn_" + f.name) for f in fields(SynthConfig)
              if getattr(args, "syn_" + f.name) is not None}
    corpus = generate_synthetic(SynthConfig(**values))
    problems = check_corpus(corpus)
    if problems:
        raise DataError("generated corpus failed its consistency check: " + "; ".join(problems[:3]))
    paths = write_corpus(corpus, args.out)
    cfg = pipeline.ExperimentConfig(**{k: FILES[k] for k in FILES})
    pipeline.save_config(cfg, Path(args.out) / "experiment.cfg")
    print(json.dumps({k: str(v) for k, v in paths.items()}))


def cmd_stage(stages):
    def run(args):
        _print_rows(pipeline.run_pipeline(_config(args), stages))
    return run


def cmd_eval_qa(args):
    stage = "composite" if args.mode == "composite" else "eval"
    _print_rows(pipeline.run_pipeline(_config(args), [stage]))


def cmd_occlude(args):
    cfg = _config(args)
    kg = load_kg(cfg.kg)
    if cfg.occlusion == "none":
        raise DataError("set --occlusion to qa-facts or fraction")
    if cfg.occlusion == "qa-facts" and cfg.qa_facts:
        facts = load_qa_facts(cfg.qa_facts, kg)
    elif cfg.occlusion == "qa-facts":
        facts = sorted({q.supporting_fact for q in pipeline.load_inputs(cfg, need_text=False).qa})
    else:
        facts = None
    out = occlude(kg, OcclusionSpec(cfg.occlusion, cfg.occlusion_fraction, cfg.occlusion_seed), facts)
    save_kg(out, args.out)
    print(json.dumps({"edges_before": len(kg.edges), "edges_after": len(out.edges), "out": args.out}))


def _load_models(cfg, split):
    inp = pipeline.load_inputs(cfg)
    entity = pipeline._load_kge(cfg).entity
    return inp, pipeline._load_qa(cfg, split, inp.vectors, entity)


def cmd_answer(args):
    cfg = _config(args)
    inp, model = _load_models(cfg, args.split)
    if args.image not in inp.images:
        raise DataError(f"unknown image {args.image!r}")
    tokens = tuple(tokenize(args.question))
    if not tokens:
        raise DataError("empty question")
    image = inp.images[args.image]
    # the answer fields are placeholders: only question and image are read
    q = QAInstance(tokens, image, image.concepts[0], "image", inp.kg.triples()[0], args.question)
    if args.composite:
        facts = prune_facts(tokens, image, inp.kg, inp.vectors, cfg.top_k, FactIndex(inp.kg, inp.vectors))
        ans = composite_answer(q, model, facts, cfg.weights, inp.vectors, inp.kg, cfg.normalize)
    else:
        ans = fusion.answer(q, model)
    p = float(model.gate_probs([q])[0])
    print(json.dumps({"answer": inp.kg.entities[ans], "entity_id": ans,
                      "head": "kvc" if p >= 0.5 else "kb", "gate_probability": p}))


def cmd_bench(args):
    cfg = _config(args)
    inp, model = _load_models(cfg, 0)
    counts = [int(c) for c in args.counts.split(",") if c.strip()]
    rows = pipeline.bench_inference(model, inp.qa[0], counts, args.repeats, cfg.seed)
    _print_rows(rows)
    ratios = pipeline.doubling_ratios(rows)
    if ratios:
        print(json.dumps({"doubling_ratios": ratios}))


def cmd_sweep(args):
    top_ks = tuple(int(k) for k in args.top_ks.split(","))
    _print_rows(pipeline.sweep_lambda(_config(args), top_ks=top_ks))


def cmd_compare(args):
    cfg = _config(args)
    kinds = tuple(args.kinds.split(",")) if args.kinds else kge.KINDS
    _print_rows(pipeline.compare_sampling(cfg, kinds, range(args.n_seeds)))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kgvqa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="write a synthetic corpus and an experiment.cfg")
    g.add_argument("--out", required=True)
    for f in fields(SynthConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest="syn_" + f.name, type=type(f.default))
    g.set_defaults(func=cmd_gen)

    simple = {"train-kge": ["kge"], "eval-linkpred": ["linkpred"], "train-qa": ["qa"]}
    for name, stages in simple.items():
        s = sub.add_parser(name)
        _add_config_flags(s)
        s.set_defaults(func=cmd_stage(stages))

    s = sub.add_parser("run", help="run several stages in order")
    _add_config_flags(s)
    s.add_argument("--stages", default="", help="comma list from " + ",".join(pipeline.STAGES))
    s.set_defaults(func=lambda a: _print_rows(pipeline.run_pipeline(_config(a), [x for x in a.stages.split(",") if x])))

    s = sub.add_parser("eval-qa")
    _add_config_flags(s)
    s.add_argument("--mode", choices=("standalone", "composite"), default="standalone")
    s.set_defaults(func=cmd_eval_qa)

    s = sub.add_parser("occlude")
    _add_config_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_occlude)

    s = sub.add_parser("answer")
    _add_config_flags(s)
    s.add_argument("--question", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--split", type=int, default=0)
    s.add_argument("--composite", action="store_true")
    s.set_defaults(func=cmd_answer)

    s = sub.add_parser("bench")
    _add_config_flags(s)
    s.add_argument("--counts", default="10000,20000,40000,80000")
    s.add_argument("--repeats", type=int, default=21)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep-lambda")
    _add_config_flags(s)
    s.add_argument("--top-ks", default="100,500")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("compare-sampling")
    _add_config_flags(s)
    s.add_argument("--kinds", default="")
    s.add_argument("--n-seeds", type=int, default=5)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
