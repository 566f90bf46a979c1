"""Self-training loop: warm-up, then S rounds of annotate / score / select / refine / fine-tune."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from fewshot_nlg.corpus import DataSplit, format_pair, write_pairs
from fewshot_nlg.generator import GRUGenerator, Vocab, sample_batch
from fewshot_nlg.metrics import EvalResult, build_lexicon, evaluate
from fewshot_nlg.mr import LabeledPair, MeaningRepresentation, Origin
from fewshot_nlg.refinement import PseudoSet, RefinementConfig, build_pseudo_set
from fewshot_nlg.seeding import derive_seed
from fewshot_nlg.selection import REPORT_HEADER, SelectionConfig, SelectionOutcome, Strategy, select
from fewshot_nlg.uncertainty import UncertaintyScore, estimate_batch

log = logging.getLogger(__name__)

# seed-stream identifiers
INIT, WARMUP, ANNOTATE, SCORE_AUG, SCORE_GOLD, REFINE, FINETUNE, DEV_EVAL, TEST_EVAL = range(1, 10)


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    # 0.1 leaves MC-dropout variances nearly flat for a model this small
    dropout: float = 0.3
    copy: bool = True


@dataclass
class SelfTrainConfig:
    iterations: int = 5
    M: int = 10
    R: int = 10
    nucleus_p: float = 0.9
    trim_fraction: float = 0.01
    strategy: str = Strategy.HIGH_MEAN_HIGH_VAR.value
    prefilter: bool = True
    joint_trim: bool = False
    normalized: bool = True
    filter_enabled: bool = True
    warmup_epochs: int = 60
    epochs_per_iteration: int = 5
    lr: float = 1e-2
    warmup_lr: float | None = None
    batch_size: int = 8
    weight_decay: float = 0.01
    clip_norm: float | None = 1.0
    gold_fraction: float = 0.2
    max_len: int = 40
    eval_k: int = 5
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**_strict(self.model, ModelConfig, "model"))
        self.validate()

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations (S) must be >= 1")
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if self.R < 1:
            raise ConfigError("R must be >= 1")
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ConfigError("nucleus_p must be in (0, 1]")
        if not 0.0 <= self.gold_fraction <= 1.0:
            raise ConfigError("gold_fraction must be in [0, 1]")
        if self.eval_k < 1:
            raise ConfigError("eval_k must be >= 1")
        try:
            Strategy(self.strategy)
            SelectionConfig(Strategy(self.strategy), self.trim_fraction)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "SelfTrainConfig":
        return cls(**_strict(data, cls, "selftrain"))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def selection(self) -> SelectionConfig:
        return SelectionConfig(Strategy(self.strategy), self.trim_fraction, self.prefilter, self.joint_trim)

    def refinement(self, seed: int) -> RefinementConfig:
        return RefinementConfig(self.R, self.nucleus_p, self.max_len, seed, self.filter_enabled)


def _strict(data: dict, cls, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return dict(data)


@dataclass
class IterationLog:
    iteration: int
    n_augmented: int
    n_selected: int
    n_pseudo: int
    n_train: int
    mean_threshold: float
    var_threshold: float
    mu_a: float
    dev_bleu: float
    dev_err: float
    best_dev_bleu: float
    degenerate: bool

    HEADER = (
        "iteration", "n_augmented", "n_selected", "n_pseudo", "n_train", "mean_threshold",
        "var_threshold", "mu_a", "dev_bleu", "dev_err", "best_dev_bleu", "degenerate",
    )

    def row(self) -> list:
        return [getattr(self, h) for h in self.HEADER]


@dataclass
class SelfTrainState:
    model: GRUGenerator
    split: DataSplit
    iteration: int = 0
    augmented: list[LabeledPair] = field(default_factory=list)
    pseudo: list[LabeledPair] = field(default_factory=list)
    history: list[IterationLog] = field(default_factory=list)
    warmup_dev: dict | None = None
    best_iteration: int | None = None
    best_dev_bleu: float = -math.inf
    best_theta: object = None


@dataclass
class AugmentResult:
    augmented: list[LabeledPair]
    aug_scores: list[UncertaintyScore]
    gold_scores: list[UncertaintyScore]
    outcome: SelectionOutcome
    pseudo: PseudoSet


def build_model(cfg: SelfTrainConfig, split: DataSplit) -> GRUGenerator:
    inputs = list(split.unlabeled) + [p.mr for p in split.dev + split.test]
    vocab = Vocab.build(split.train, inputs)
    m = cfg.model
    return GRUGenerator(vocab, m.embed_dim, m.hidden_dim, m.dropout, seed=derive_seed(cfg.seed, INIT), copy=m.copy)


def mix_training_data(gold: Sequence[LabeledPair], pseudo: Sequence[LabeledPair], gold_fraction: float) -> list[LabeledPair]:
    """Concatenate, repeating the gold set until it is at least ``gold_fraction`` of the mix."""
    reps = 1
    if pseudo and gold_fraction > 0:
        while len(gold) * reps < gold_fraction * (len(gold) * reps + len(pseudo)):
            reps += 1
    return list(gold) * reps + list(pseudo)


def aug_id(n: int) -> str:
    return f"u{n:06d}"


def gold_id(n: int) -> str:
    return f"g{n:06d}"


def self_augment(
    model: GRUGenerator,
    gold: Sequence[LabeledPair],
    unlabeled: Sequence[MeaningRepresentation],
    cfg: SelfTrainConfig,
    iteration: int,
    lexicon,
) -> AugmentResult:
    """Annotate the pool, score it, select, refine and filter. No training."""
    s = cfg.seed
    samples = sample_batch(
        model, unlabeled, [derive_seed(s, iteration, ANNOTATE, n) for n in range(len(unlabeled))], cfg.nucleus_p, cfg.max_len
    )
    augmented = [LabeledPair(mr, r.tokens, Origin.AUGMENTED) for mr, r in zip(unlabeled, samples)]
    aug_scores = estimate_batch(
        model, augmented, cfg.M, [derive_seed(s, iteration, SCORE_AUG, n) for n in range(len(augmented))], cfg.normalized
    )
    gold_scores = estimate_batch(
        model, list(gold), cfg.M, [derive_seed(s, iteration, SCORE_GOLD, n) for n in range(len(gold))], cfg.normalized
    )
    outcome = select(
        [(aug_id(n), sc) for n, sc in enumerate(aug_scores)],
        [(gold_id(n), sc) for n, sc in enumerate(gold_scores)],
        cfg.selection,
    )
    by_id = {aug_id(n): mr for n, mr in enumerate(unlabeled)}
    chosen = [(pid, by_id[pid]) for pid in outcome.selected]
    pseudo = build_pseudo_set(
        model, chosen, cfg.refinement(derive_seed(s, iteration, REFINE)), lexicon, [p.mr for p in gold]
    )
    return AugmentResult(augmented, aug_scores, gold_scores, outcome, pseudo)


class Run:
    """One self-training experiment, optionally persisted to a run directory."""

    def __init__(self, cfg: SelfTrainConfig, split: DataSplit, out_dir=None):
        self.cfg = cfg
        self.split = split
        self.out = Path(out_dir) if out_dir is not None else None
        self.filter_lexicon = build_lexicon([p.mr for p in split.train] + list(split.unlabeled))
        self.eval_lexicon = build_lexicon(split.all_mrs())
        self.state = SelfTrainState(build_model(cfg, split), split)

    # -- persistence helpers --------------------------------------------

    def _dir(self, name: str) -> Path | None:
        if self.out is None:
            return None
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    @staticmethod
    def _write_json(path: Path, data) -> None:
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @staticmethod
    def _write_tsv(path: Path, header, rows) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def evaluate_dev(self, iteration: int) -> EvalResult:
        return evaluate(
            self.state.model, self.split.dev, self.eval_lexicon, self.cfg.eval_k,
            derive_seed(self.cfg.seed, iteration, DEV_EVAL), self.cfg.nucleus_p, self.cfg.max_len,
        )

    def evaluate_test(self, model: GRUGenerator) -> EvalResult:
        return evaluate(
            model, self.split.test, self.eval_lexicon, self.cfg.eval_k,
            derive_seed(self.cfg.seed, TEST_EVAL), self.cfg.nucleus_p, self.cfg.max_len,
        )

    # -- loop steps ------------------------------------------------------

    def warm_up(self) -> SelfTrainState:
        st, cfg = self.state, self.cfg
        lr = cfg.warmup_lr if cfg.warmup_lr is not None else cfg.lr
        if cfg.warmup_epochs > 0:
            report = st.model.train_epochs(
                self.split.train, cfg.warmup_epochs, lr, batch_size=cfg.batch_size,
                seed=derive_seed(cfg.seed, WARMUP), weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm,
            )
            losses = report.epoch_losses
        else:
            losses = []
        dev = self.evaluate_dev(0)
        st.warmup_dev = dev.row()
        log.info("warm-up: %d epochs, dev BLEU %.2f ERR %.2f", cfg.warmup_epochs, dev.bleu, 100 * dev.err)
        d = self._dir("warmup")
        if d is not None:
            st.model.save(d / "checkpoint.npz")
            self._write_json(d / "metrics.json", {"dev": st.warmup_dev, "epoch_losses": losses})
        return st

    def run_iteration(self, iteration: int) -> IterationLog:
        st, cfg, split = self.state, self.cfg, self.split
        st.iteration = iteration
        st.augmented, st.pseudo = [], []
        aug = self_augment(st.model, split.train, split.unlabeled, cfg, iteration, self.filter_lexicon)
        st.augmented = aug.augmented
        st.pseudo = aug.pseudo.pairs
        mixture = mix_training_data(split.train, st.pseudo, cfg.gold_fraction)
        st.model.train_epochs(
            mixture, cfg.epochs_per_iteration, cfg.lr, batch_size=cfg.batch_size,
            seed=derive_seed(cfg.seed, iteration, FINETUNE), weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm,
        )
        dev = self.evaluate_dev(iteration)
        if dev.bleu > st.best_dev_bleu:
            st.best_dev_bleu = dev.bleu
            st.best_iteration = iteration
            st.best_theta = st.model.theta.copy()
        row = IterationLog(
            iteration, len(aug.augmented), len(aug.outcome.selected), len(st.pseudo), len(mixture),
            aug.outcome.mean_threshold, aug.outcome.var_threshold, aug.outcome.mu_a,
            dev.bleu, 100 * dev.err, st.best_dev_bleu, not st.pseudo,
        )
        st.history.append(row)
        log.info(
            "iteration %d: |D_A|=%d selected=%d |D_L'|=%d dev BLEU %.2f ERR %.2f",
            iteration, row.n_augmented, row.n_selected, row.n_pseudo, dev.bleu, 100 * dev.err,
        )
        self._persist_iteration(iteration, aug, row)
        return row

    def _persist_iteration(self, iteration: int, aug: AugmentResult, row: IterationLog) -> None:
        d = self._dir(f"iter_{iteration:02d}")
        if d is None:
            return
        write_pairs(aug.augmented, d / "augmented.txt")
        self._write_tsv(d / "scores.tsv", ("id", "mean", "variance", "M", "n_tokens"), [
            (aug_id(n), sc.mean, sc.variance, sc.M, sc.n_tokens) for n, sc in enumerate(aug.aug_scores)
        ])
        self._write_tsv(d / "selection.tsv", REPORT_HEADER, aug.outcome.report_rows())
        write_pairs(aug.pseudo.pairs, d / "pseudo.txt")
        self._write_tsv(d / "pseudo_provenance.tsv", PseudoSet.PROVENANCE_HEADER, aug.pseudo.records)
        self.state.model.save(d / "checkpoint.npz")
        if self.state.best_iteration == iteration:
            self.state.model.save(self.out / "best.npz")
        self._write_json(d / "metrics.json", {
            "row": dict(zip(IterationLog.HEADER, row.row())),
            "best_iteration": self.state.best_iteration,
            "thresholds": {"mean": aug.outcome.mean_threshold, "variance": aug.outcome.var_threshold,
                           "mu_a": aug.outcome.mu_a, "n_pool": aug.outcome.n_pool},
            "rejections": dict(sorted(aug.pseudo.rejections.items())),
        })

    def _restore(self) -> int:
        """Reload state from the last completed stage; returns the next iteration."""
        st, out = self.state, self.out
        warm = out / "warmup" / "metrics.json"
        if not warm.exists():
            return 0
        last_dir = out / "warmup"
        st.warmup_dev = json.loads(warm.read_text())["dev"]
        nxt = 1
        for it in range(1, self.cfg.iterations + 1):
            m = out / f"iter_{it:02d}" / "metrics.json"
            if not (m.exists() and (out / f"iter_{it:02d}" / "checkpoint.npz").exists()):
                break
            data = json.loads(m.read_text())
            st.history.append(IterationLog(**data["row"]))
            last_dir = out / f"iter_{it:02d}"
            nxt = it + 1
        st.model.theta[:] = GRUGenerator.load(last_dir / "checkpoint.npz").theta
        if st.history:
            best = max(st.history, key=lambda r: (r.dev_bleu, -r.iteration))
            st.best_iteration = best.iteration
            st.best_dev_bleu = best.dev_bleu
            st.best_theta = GRUGenerator.load(out / f"iter_{best.iteration:02d}" / "checkpoint.npz").theta.copy()
        log.info("resuming at iteration %d", nxt)
        return nxt

    def run(self, resume: bool = False, stop_after: int | None = None) -> dict | None:
        """Warm up, iterate, then evaluate the best checkpoint on the test set.

        ``stop_after`` ends the run early (after that many iterations) without a
        final report, leaving a resumable run directory.
        """
        cfg = self.cfg
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            snap = self.out / "config.json"
            if resume and snap.exists() and json.loads(snap.read_text()) != cfg.to_dict():
                raise ConfigError(f"{snap}: config differs from the interrupted run")
            self._write_json(snap, cfg.to_dict())
        start = self._restore() if resume and self.out is not None else 0
        warm_theta = None
        if start == 0:
            self.warm_up()
            start = 1
        if self.out is None or not resume:
            warm_theta = self.state.model.theta.copy()
        for it in range(start, cfg.iterations + 1):
            self.run_iteration(it)
            if stop_after is not None and it >= stop_after and it < cfg.iterations:
                return None
        return self.finish(warm_theta)

    def finish(self, warm_theta=None) -> dict:
        st, cfg = self.state, self.cfg
        if warm_theta is None and self.out is not None:
            warm_theta = GRUGenerator.load(self.out / "warmup" / "checkpoint.npz").theta
        best = st.model.copy()
        best.theta[:] = st.best_theta
        test = self.evaluate_test(best)
        baseline_model = st.model.copy()
        baseline_model.theta[:] = warm_theta
        baseline = self.evaluate_test(baseline_model)
        report = {
            "config": cfg.to_dict(),
            "sizes": {"train": len(self.split.train), "dev": len(self.split.dev), "test": len(self.split.test),
                      "unlabeled": len(self.split.unlabeled)},
            "warmup_dev": st.warmup_dev,
            "iterations": [dict(zip(IterationLog.HEADER, r.row())) for r in st.history],
            "best_iteration": st.best_iteration,
            "test": test.row(),
            "warmup_test": baseline.row(),
        }
        self.best_model = best
        self.test_result = test
        if self.out is not None:
            self._write_json(self.out / "report.json", report)
            self._write_tsv(self.out / "iterations.tsv", IterationLog.HEADER, [r.row() for r in st.history])
            (self.out / "report.txt").write_text(format_run_report(report) + "\n", encoding="utf-8")
            best.save(self.out / "best.npz")
            (self.out / "test_predictions.txt").write_text(
                "".join(format_pair(LabeledPair(mr, toks, Origin.AUGMENTED)) + "\n" for mr, toks in test.predictions),
                encoding="utf-8",
            )
        return report


def format_run_report(report: dict) -> str:
    lines = [f"best iteration: {report['best_iteration']}", "",
             "iter  |D_A|  sel  |D_L'|  devBLEU  devERR  bestDev"]
    for r in report["iterations"]:
        lines.append(
            f"{r['iteration']:>4}  {r['n_augmented']:>5}  {r['n_selected']:>3}  {r['n_pseudo']:>6}  "
            f"{r['dev_bleu']:>7.2f}  {r['dev_err']:>6.2f}  {r['best_dev_bleu']:>7.2f}"
        )
    t, w = report["test"], report["warmup_test"]
    lines += ["", f"test BLEU {t['bleu']:.2f}  ERR {t['err']:.2f}  (k={report['config']['eval_k']})",
              f"warm-up only: test BLEU {w['bleu']:.2f}  ERR {w['err']:.2f}"]
    return "\n".join(lines)


def run(cfg: SelfTrainConfig, split: DataSplit, out_dir=None, resume: bool = False) -> dict:
    return Run(cfg, split, out_dir).run(resume=resume)

