"""Command-line entry point: synth, train, selftrain, eval, inspect, augment.

Only paths, the seed and each command's essentials are flags; the rest lives
in a YAML or JSON config file whose keys are checked strictly.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from fewshot_nlg.corpus import (
    DataSplit,
    ToyGrammarSpec,
    default_toy_spec,
    load_mrs,
    load_pairs,
    load_split,
    synth_toy_corpus,
    write_pairs,
    write_split,
)
from fewshot_nlg.generator import GRUGenerator, sample_batch
from fewshot_nlg.metrics import build_lexicon, evaluate, group_references, score_predictions
from fewshot_nlg.mr import LabeledPair, Origin, render_mr
from fewshot_nlg.refinement import PseudoSet
from fewshot_nlg.seeding import derive_seed
from fewshot_nlg.selection import REPORT_HEADER, SelectionConfig, Strategy, select
from fewshot_nlg.selftrain import (
    ANNOTATE,
    SCORE_AUG,
    SCORE_GOLD,
    ConfigError,
    Run,
    SelfTrainConfig,
    aug_id,
    gold_id,
    self_augment,
)
from fewshot_nlg.uncertainty import estimate_batch

OUTPUT_ROOT_ENV = "FEWSHOT_NLG_OUTPUT_ROOT"

log = logging.getLogger("fewshot_nlg")


class StageError(RuntimeError):
    """A failure attributed to one named stage of a command."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


@dataclass
class DataPaths:
    train: str
    dev: str | None = None
    test: str | None = None
    unlabeled: str | None = None
    strict: bool = True


@dataclass
class ToyConfig:
    grammar: str | None = None  # path to a grammar file; built-in grammar when omitted
    seed: int | None = None  # grammar seed; the run seed when omitted
    n_train: int = 50
    n_dev: int = 50
    n_test: int = 100
    n_unlabeled: int = 500


@dataclass
class RunConfigFile:
    selftrain: SelfTrainConfig = field(default_factory=SelfTrainConfig)
    data: DataPaths | None = None
    toy: ToyConfig | None = None
    output_dir: str | None = None


def _check_keys(data, cls, where: str) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(data) - {f.name for f in fields(cls)})
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return data


def parse_run_config(data: dict | None) -> RunConfigFile:
    data = _check_keys(data, RunConfigFile, "config")
    sections = {}
    if "selftrain" in data:
        sections["selftrain"] = SelfTrainConfig.from_dict(_check_keys(data["selftrain"], SelfTrainConfig, "selftrain"))
    if data.get("data") is not None:
        sections["data"] = DataPaths(**_check_keys(data["data"], DataPaths, "data"))
    if data.get("toy") is not None:
        sections["toy"] = ToyConfig(**_check_keys(data["toy"], ToyConfig, "toy"))
    if data.get("data") is not None and data.get("toy") is not None:
        raise ConfigError("config may set 'data' or 'toy', not both")
    return RunConfigFile(output_dir=data.get("output_dir"), **sections)


def load_run_config(path) -> RunConfigFile:
    if path is None:
        return RunConfigFile()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return parse_run_config(data)


# -- helpers ------------------------------------------------------------------


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (OSError, ValueError, KeyError, yaml.YAMLError) as exc:
        raise StageError(name, exc) from exc


def _write_tsv(rows, header, fh) -> None:
    w = csv.writer(fh, delimiter="\t", lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def _out_dir(args, rc: RunConfigFile, command: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if rc.output_dir:
        return Path(rc.output_dir)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{command}-seed{args.seed if args.seed is not None else rc.selftrain.seed}"


def _selftrain_config(args, rc: RunConfigFile) -> SelfTrainConfig:
    data = rc.selftrain.to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    if getattr(args, "strategy", None):
        data["strategy"] = args.strategy
    return SelfTrainConfig.from_dict(data)


def _toy_spec(toy: ToyConfig, seed: int) -> ToyGrammarSpec:
    grammar_seed = toy.seed if toy.seed is not None else seed
    if toy.grammar is None:
        return default_toy_spec(grammar_seed)
    spec = ToyGrammarSpec.from_file(toy.grammar)
    return ToyGrammarSpec.from_dict({**spec.to_dict(), "seed": grammar_seed})


def _load_data(rc: RunConfigFile, seed: int) -> DataSplit:
    if rc.data is not None:
        d = rc.data
        return load_split(d.train, d.dev, d.test, d.unlabeled, strict=d.strict)
    toy = rc.toy or ToyConfig()
    return synth_toy_corpus(_toy_spec(toy, seed), toy.n_train, toy.n_dev, toy.n_test, toy.n_unlabeled)


def _print_sizes(split: DataSplit) -> None:
    rows = [("train", len(split.train)), ("dev", len(split.dev)), ("test", len(split.test)),
            ("unlabeled", len(split.unlabeled))]
    _write_tsv(rows, ("split", "size"), sys.stdout)


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    rc = _stage("config", load_run_config, args.config)
    seed = args.seed if args.seed is not None else rc.selftrain.seed
    toy = rc.toy or ToyConfig()
    spec = _stage("grammar", _toy_spec, toy, seed)
    split = _stage("synth", synth_toy_corpus, spec, toy.n_train, toy.n_dev, toy.n_test, toy.n_unlabeled)
    out = _out_dir(args, rc, "synth")
    _stage("write", write_split, split, out)
    _print_sizes(split)
    return 0


def cmd_train(args) -> int:
    rc = _stage("config", load_run_config, args.config)
    cfg = _stage("config", _selftrain_config, args, rc)
    split = _stage("load-data", _load_data, rc, cfg.seed)
    out = _out_dir(args, rc, "train")
    run = _stage("setup", Run, cfg, split, out)
    _stage("warm-up", run.warm_up)
    row = run.state.warmup_dev
    _write_tsv([("dev", row["bleu"], row["err"], row["n_mrs"], row["n_slots"])],
               ("split", "bleu", "err", "n_mrs", "n_slots"), sys.stdout)
    print(f"# checkpoint: {out / 'warmup' / 'checkpoint.npz'}", file=sys.stderr)
    return 0


def cmd_selftrain(args) -> int:
    rc = _stage("config", load_run_config, args.config)
    cfg = _stage("config", _selftrain_config, args, rc)
    split = _stage("load-data", _load_data, rc, cfg.seed)
    out = _out_dir(args, rc, "selftrain")
    run = _stage("setup", Run, cfg, split, out)
    report = _stage("selftrain", run.run, resume=args.resume, stop_after=args.stop_after)
    if report is None:
        print(f"# stopped after iteration {args.stop_after}; resume with --resume", file=sys.stderr)
        return 0
    rows = [(r["iteration"], r["n_selected"], r["n_pseudo"], r["dev_bleu"], r["dev_err"]) for r in report["iterations"]]
    _write_tsv(rows, ("iteration", "n_selected", "n_pseudo", "dev_bleu", "dev_err"), sys.stdout)
    t, w = report["test"], report["warmup_test"]
    print(f"# best iteration {report['best_iteration']}: test BLEU {t['bleu']:.2f} ERR {t['err']:.2f}; "
          f"warm-up only BLEU {w['bleu']:.2f} ERR {w['err']:.2f}; run dir {out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    pairs = _stage("load-test", load_pairs, args.test)
    grouped = group_references(pairs)
    lex_mrs = [mr for mr, _ in grouped]
    for extra in args.lexicon_from or ():
        lex_mrs += [p.mr for p in _stage("load-lexicon", load_pairs, extra)]
    lexicon = build_lexicon(lex_mrs)
    if args.predictions:
        preds = _stage("load-predictions", load_pairs, args.predictions, Origin.AUGMENTED)
        by_mr = {}
        for p in preds:
            by_mr.setdefault(render_mr(p.mr), p.text)
        missing = [render_mr(mr) for mr, _ in grouped if render_mr(mr) not in by_mr]
        if missing:
            raise StageError("load-predictions", ValueError(f"no prediction for MR {missing[0]!r}"))
        result = score_predictions([by_mr[render_mr(mr)] for mr, _ in grouped], grouped, lexicon)
        source = args.predictions
    else:
        if not args.checkpoint:
            raise StageError("load-checkpoint", ValueError("--checkpoint or --predictions is required"))
        model = _stage("load-checkpoint", GRUGenerator.load, args.checkpoint)
        seed = args.seed if args.seed is not None else 0
        result = _stage("decode", evaluate, model, pairs, lexicon, args.k, seed, args.nucleus_p, args.max_len)
        source = args.checkpoint
    print(f"# source: {source}  k={args.k}")
    row = result.row()
    _write_tsv([(row["bleu"], row["err"], row["n_mrs"], row["n_slots"])], ("bleu", "err", "n_mrs", "n_slots"), sys.stdout)
    if args.output:
        write_pairs([LabeledPair(mr, t, Origin.AUGMENTED) for mr, t in result.predictions], args.output)
    return 0


INSPECT_HEADER = ("id", "mean", "variance", "M", "n_tokens", "survived_prefilter", "selected", "reason", "mr", "response")


def cmd_inspect(args) -> int:
    model = _stage("load-checkpoint", GRUGenerator.load, args.checkpoint)
    mrs = _stage("load-unlabeled", load_mrs, args.unlabeled)
    gold = _stage("load-gold", load_pairs, args.gold) if args.gold else []
    seed = args.seed if args.seed is not None else 0
    samples = _stage("annotate", sample_batch, model, mrs, [derive_seed(seed, ANNOTATE, n) for n in range(len(mrs))],
                     args.nucleus_p, args.max_len)
    augmented = [LabeledPair(mr, s.tokens, Origin.AUGMENTED) for mr, s in zip(mrs, samples)]
    aug_scores = _stage("score", estimate_batch, model, augmented, args.M,
                        [derive_seed(seed, SCORE_AUG, n) for n in range(len(augmented))])
    gold_scores = _stage("score", estimate_batch, model, gold, args.M,
                         [derive_seed(seed, SCORE_GOLD, n) for n in range(len(gold))])
    cfg = _stage("select", SelectionConfig, Strategy(args.strategy), args.trim_fraction)
    outcome = _stage("select", select, [(aug_id(n), sc) for n, sc in enumerate(aug_scores)],
                     [(gold_id(n), sc) for n, sc in enumerate(gold_scores)], cfg)
    # threshold lines, marked with '#', precede the table
    print(f"# mu_a\t{outcome.mu_a!r}")
    print(f"# mean_threshold\t{outcome.mean_threshold!r}")
    print(f"# var_threshold\t{outcome.var_threshold!r}")
    header = INSPECT_HEADER + (("raw_log_samples",) if args.verbose else ())
    decisions = {d.pair_id: d for d in outcome.decisions}
    rows = []
    for n, (pair, sc) in enumerate(zip(augmented, aug_scores)):
        d = decisions[aug_id(n)]
        row = [aug_id(n), repr(sc.mean), repr(sc.variance), sc.M, sc.n_tokens, d.survived_prefilter, d.selected,
               d.reason, render_mr(pair.mr), " ".join(pair.text)]
        if args.verbose:
            row.append(" ".join(repr(float(x)) for x in sc.raw_log_samples))
        rows.append(row)
    _write_tsv(rows, header, sys.stdout)
    return 0


def cmd_augment(args) -> int:
    rc = _stage("config", load_run_config, args.config)
    cfg = _stage("config", _selftrain_config, args, rc)
    split = _stage("load-data", _load_data, rc, cfg.seed)
    model = _stage("load-checkpoint", GRUGenerator.load, args.checkpoint)
    lexicon = build_lexicon([p.mr for p in split.train] + list(split.unlabeled))
    aug = _stage("augment", self_augment, model, split.train, split.unlabeled, cfg, 1, lexicon)
    out = _out_dir(args, rc, "augment")
    out.mkdir(parents=True, exist_ok=True)
    write_pairs(aug.augmented, out / "augmented.txt")
    with open(out / "selection.tsv", "w", newline="", encoding="utf-8") as fh:
        _write_tsv(aug.outcome.report_rows(), REPORT_HEADER, fh)
    write_pairs(aug.pseudo.pairs, out / "pseudo.txt")
    with open(out / "pseudo_provenance.tsv", "w", newline="", encoding="utf-8") as fh:
        _write_tsv(aug.pseudo.records, PseudoSet.PROVENANCE_HEADER, fh)
    _write_tsv([(len(aug.augmented), len(aug.outcome.selected), len(aug.pseudo.pairs))],
               ("n_augmented", "n_selected", "n_pseudo"), sys.stdout)
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fewshot-nlg", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="global seed (overrides the config file)")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, out=True):
        p.add_argument("--config", help="YAML or JSON run config")
        if out:
            p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<command>-seed<seed>)")
        return p

    with_config(sub.add_parser("synth", help="write a toy corpus")).set_defaults(func=cmd_synth)
    with_config(sub.add_parser("train", help="warm-up only")).set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("selftrain", help="warm-up plus self-training iterations"))
    p.add_argument("--resume", action="store_true", help="continue an interrupted run directory")
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--stop-after", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("eval", help="best-of-k BLEU and ERR on a labeled file")
    p.add_argument("--test", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="score this prediction file instead of decoding")
    p.add_argument("--lexicon-from", nargs="*", help="extra labeled files whose MR values join the ERR lexicon")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--nucleus-p", type=float, default=0.9)
    p.add_argument("--max-len", type=int, default=40)
    p.add_argument("--output", help="write the chosen predictions here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="uncertainty table for an unlabeled MR file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--gold", help="labeled file pooled into the thresholds")
    p.add_argument("--M", type=int, default=10)
    p.add_argument("--strategy", default=Strategy.HIGH_MEAN_HIGH_VAR.value, choices=[s.value for s in Strategy])
    p.add_argument("--trim-fraction", type=float, default=0.01)
    p.add_argument("--nucleus-p", type=float, default=0.9)
    p.add_argument("--max-len", type=int, default=40)
    p.add_argument("--verbose", action="store_true", help="add the raw log-likelihood samples")
    p.set_defaults(func=cmd_inspect)

    p = with_config(sub.add_parser("augment", help="annotate, select and refine without fine-tuning"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.set_defaults(func=cmd_augment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error [{args.command}/{exc.stage}]: {exc.exc}", file=sys.stderr)
        return 2 if isinstance(exc.exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
