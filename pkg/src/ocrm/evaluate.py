"""ROC-AUC, the repeated-trial one-class protocol and the ablation runner."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import data, pipeline
from .pipeline import ARM_LABELS, ARMS, TrainConfig

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["class", "arm", "trial", "auc", "mean", "std"]
SCORE_COLUMNS = ["sample_index", "true_label", "is_positive", "score"]


class UndefinedAUCError(ValueError):
    """AUC needs at least one in-class and one out-of-class sample."""


@dataclass
class ScoredSet:
    scores: np.ndarray  # higher = more anomalous
    is_positive: np.ndarray  # True = in-class

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.is_positive = np.asarray(self.is_positive, dtype=bool).ravel()
        if self.scores.shape != self.is_positive.shape:
            raise ValueError("scores and labels differ in length")


def roc_auc(s):
    """Probability that an out-of-class sample outscores an in-class one.

    Mann-Whitney rank statistic on average ranks, so ties earn half credit.
    """
    neg = ~s.is_positive
    n_neg = int(neg.sum())
    n_pos = len(neg) - n_neg
    if n_neg == 0 or n_pos == 0:
        raise UndefinedAUCError(f"need both classes, got {n_pos} in-class and {n_neg} out-of-class")
    ranks = rankdata(s.scores)  # average ranks; exact halves, so the sum is exact
    u = ranks[neg].sum() - n_neg * (n_neg + 1) / 2.0
    return float(u / (n_neg * n_pos))


# ------------------------------------------------------------------ reports

def _mean_std(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), std


@dataclass
class ClassRow:
    class_id: int
    arm: str
    aucs: list  # per trial; None marks a failed trial
    errors: list = field(default_factory=list)

    @property
    def valid(self):
        return [a for a in self.aucs if a is not None]

    @property
    def mean(self):
        return _mean_std(self.valid)[0]

    @property
    def std(self):
        return _mean_std(self.valid)[1]

    @property
    def n_failed(self):
        return sum(a is None for a in self.aucs)


@dataclass
class EvalReport:
    rows: list
    config: dict = field(default_factory=dict)

    @property
    def arms(self):
        return list(dict.fromkeys(r.arm for r in self.rows))

    def row(self, class_id, arm):
        for r in self.rows:
            if r.class_id == class_id and r.arm == arm:
                return r
        raise KeyError((class_id, arm))


@dataclass
class Protocol:
    """Everything needed to run one class through train, fit and score."""

    train: TrainConfig
    dataset: str = "mnist"
    root: str = ""
    positive_class: int = 1
    n_train: int | None = None  # first n in-class training images; None = all
    scores_dir: str | None = None  # dump per-sample scores here when set


def load_protocol_data(protocol):
    root = Path(protocol.root) if protocol.root else data.default_data_dir() / protocol.dataset
    train_ds = data.load_dataset(protocol.dataset, root, "train")
    test_ds = data.load_dataset(protocol.dataset, root, "test")
    split = data.one_class_split(train_ds, test_ds, protocol.positive_class)
    x_train = split.train if protocol.n_train is None else split.train[:protocol.n_train]
    if len(x_train) == 0:
        raise data.EmptyDatasetError("no training images selected")
    return data.preprocess(x_train), data.preprocess(test_ds.images), split


def score_csv(scores, labels, is_positive):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for i, (s, lab, pos) in enumerate(zip(scores, labels, is_positive)):
        w.writerow([i, int(lab), int(bool(pos)), repr(float(s))])
    return buf.getvalue()


def _run_one(train_cfg, arms, x_train, x_test, split, scores_dir=None, trial=0):
    """Train once and score with every arm in ``arms`` (they must share training)."""
    model = pipeline.train(x_train, train_cfg)
    out = {}
    for arm in arms:
        cfg = replace(model.config, arm=arm)
        m = pipeline.TrainedModel(model.nets, cfg, model.history)
        sv = pipeline.fit_svdd_stage(m, x_train) if pipeline.uses_svdd(arm) else None
        scores = pipeline.score_images(pipeline.Detector(m, sv), x_test)
        pos = split.test_is_positive
        out[arm] = roc_auc(ScoredSet(scores, pos))
        if scores_dir is not None:
            path = Path(scores_dir) / f"scores_class{split.positive_class}_{arm}_trial{trial}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(score_csv(scores, split.test.labels, pos))
    return out


def _trials(protocol, arms, n_trials, prepared=None):
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    x_train, x_test, split = prepared or load_protocol_data(protocol)
    base = protocol.train.seed
    rows = {arm: ClassRow(protocol.positive_class, arm, []) for arm in arms}
    groups = {}
    for arm in arms:
        groups.setdefault(pipeline.training_arm(arm), []).append(arm)
    for t in range(n_trials):
        for train_arm, members in groups.items():
            cfg = replace(protocol.train, arm=train_arm, seed=base + t)
            try:
                aucs = _run_one(cfg, members, x_train, x_test, split, protocol.scores_dir, t)
            except pipeline.TrainingDivergenceError as exc:
                log.warning("class %d trial %d (%s) diverged: %s", protocol.positive_class, t, train_arm, exc)
                aucs = {a: None for a in members}
                for a in members:
                    rows[a].errors.append(f"trial {t}: {exc}")
            for a, v in aucs.items():
                rows[a].aucs.append(v)
    cfg = asdict(protocol.train)
    cfg.update(dataset=protocol.dataset, positive_class=protocol.positive_class, n_train=protocol.n_train)
    return EvalReport([rows[a] for a in arms], cfg)


def run_trials(protocol, n_trials=10, prepared=None):
    """Repeat the protocol with seeds ``seed .. seed + n_trials - 1`` for the
    configured arm. Diverged trials are recorded as failed, not dropped."""
    return _trials(protocol, [protocol.train.arm], n_trials, prepared)


def run_ablation(protocol, n_trials=1, prepared=None):
    """All five arms with shared seeds. Arms that differ only in scoring reuse
    one training run."""
    return _trials(protocol, list(ARMS), n_trials, prepared)


# ------------------------------------------------------------ serialization

def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report.rows:
        for t, a in enumerate(r.aucs):
            w.writerow([r.class_id, r.arm, t, "failed" if a is None else _fmt(a), _fmt(r.mean), _fmt(r.std)])
    return buf.getvalue()


def parse_report_csv(text):
    """Inverse of :func:`report_csv` (config snapshot aside)."""
    rows = {}
    for rec in csv.DictReader(io.StringIO(text)):
        key = (int(rec["class"]), rec["arm"])
        row = rows.setdefault(key, ClassRow(key[0], key[1], []))
        row.aucs.append(None if rec["auc"] == "failed" else float(rec["auc"]))
    return EvalReport(list(rows.values()))


def report_markdown(report):
    """One row per class, one column per arm, cells as ``mean (std)`` in percent."""
    arms = report.arms
    classes = list(dict.fromkeys(r.class_id for r in report.rows))
    lines = ["| class | " + " | ".join(ARM_LABELS.get(a, a) for a in arms) + " |",
             "|---" * (len(arms) + 1) + "|"]
    for c in classes:
        cells = []
        for a in arms:
            try:
                r = report.row(c, a)
            except KeyError:
                cells.append("")
                continue
            cell = "n/a" if not r.valid else f"{100 * r.mean:.1f} ({100 * r.std:.1f})"
            if r.n_failed:
                cell += f" [{r.n_failed} failed]"
            cells.append(cell)
        lines.append(f"| {c} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(report, path, fmt="csv"):
    if fmt not in ("csv", "markdown"):
        raise ValueError(f"unknown report format {fmt!r}")
    text = report_csv(report) if fmt == "csv" else report_markdown(report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
