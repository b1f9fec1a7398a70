import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocrm import evaluate, pipeline
from ocrm.data import Dataset, OneClassSplit
from ocrm.evaluate import ClassRow, EvalReport, ScoredSet, UndefinedAUCError, roc_auc
from ocrm.pipeline import TrainConfig


def pairwise_auc(scores, is_positive):
    """O(n^2) oracle: fraction of (out, in) pairs where the out-of-class sample
    scores higher, ties counted one half."""
    neg = [s for s, p in zip(scores, is_positive) if not p]
    pos = [s for s, p in zip(scores, is_positive) if p]
    wins = 0.0
    for a in neg:
        for b in pos:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(neg) * len(pos))


def random_set(rng, n_max=200):
    n = int(rng.integers(2, n_max + 1))
    labels = rng.random(n) < rng.uniform(0.1, 0.9)
    labels[0], labels[1] = True, False
    # few distinct values so ties are common
    scores = rng.integers(0, int(rng.integers(2, 20)), n).astype(float) if rng.random() < 0.5 else rng.standard_normal(n)
    return scores, labels


def test_examples():
    assert roc_auc(ScoredSet([0.1, 0.2, 0.8, 0.9], [True, True, False, False])) == 1.0
    assert roc_auc(ScoredSet([0.3] * 6, [True, False] * 3)) == 0.5
    rng = np.random.default_rng(0)
    s, y = rng.random(10), np.array([True] * 5 + [False] * 5)
    assert roc_auc(ScoredSet(s, y)) == pairwise_auc(s, y)


def test_single_class_is_undefined():
    with pytest.raises(UndefinedAUCError):
        roc_auc(ScoredSet([1.0, 2.0], [True, True]))
    with pytest.raises(UndefinedAUCError):
        roc_auc(ScoredSet([1.0, 2.0], [False, False]))
    with pytest.raises(ValueError):
        ScoredSet([1.0], [True, False])


def test_matches_pairwise_oracle_with_ties():
    rng = np.random.default_rng(1)
    for _ in range(300):
        s, y = random_set(rng)
        assert roc_auc(ScoredSet(s, y)) == pairwise_auc(s, y)


def test_invariant_under_increasing_transforms():
    rng = np.random.default_rng(2)
    for _ in range(50):
        s, y = random_set(rng, 60)
        s = s / 4.0  # keep exp finite
        base = roc_auc(ScoredSet(s, y))
        for f in (np.exp, lambda v: 3.0 * v - 7.0, lambda v: v ** 3):
            assert roc_auc(ScoredSet(f(s), y)) == base


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40, unique=True), st.randoms())
def test_negation_complements(scores, r):
    y = np.array([r.random() < 0.5 for _ in scores])
    y[0], y[1] = True, False
    s = np.array(scores)
    assert abs(roc_auc(ScoredSet(s, y)) + roc_auc(ScoredSet(-s, y)) - 1.0) < 1e-12


def test_report_arithmetic_and_failures():
    row = ClassRow(1, "full", [0.9, 1.0])
    assert abs(row.mean - 0.95) < 1e-12
    assert abs(row.std - 0.0707106781) < 1e-9
    row = ClassRow(1, "full", [0.9, None, 1.0], ["trial 1: diverged"])
    assert row.n_failed == 1 and abs(row.mean - 0.95) < 1e-12
    assert ClassRow(1, "full", [0.8]).std == 0.0


def test_csv_round_trip_and_header(tmp_path):
    rep = EvalReport([ClassRow(1, "full", [0.9, 1.0]), ClassRow(1, "ae_svdd", [0.6, None])])
    path = evaluate.emit_report(rep, tmp_path / "r.csv", "csv")
    text = path.read_text()
    assert text.splitlines()[0] == "class,arm,trial,auc,mean,std"
    back = evaluate.parse_report_csv(text)
    assert [(r.class_id, r.arm, r.aucs) for r in back.rows] == [(r.class_id, r.arm, r.aucs) for r in rep.rows]
    for r in back.rows:
        m, s = evaluate._mean_std(r.valid)
        assert abs(m - r.mean) <= 1e-12 and abs(s - r.std) <= 1e-12


def test_markdown_cells(tmp_path):
    rep = EvalReport([ClassRow(5, "ae_svdd", [0.9, 1.0]), ClassRow(5, "full", [0.5, None])])
    md = evaluate.emit_report(rep, tmp_path / "r.md", "markdown").read_text()
    assert "| 5 | 95.0 (7.1) | 50.0 (0.0) [1 failed] |" in md
    assert pipeline.ARM_LABELS["full"] in md.splitlines()[0]
    with pytest.raises(ValueError):
        evaluate.emit_report(rep, tmp_path / "r.txt", "txt")


def test_score_dump_columns():
    text = evaluate.score_csv([0.5, -1.0], [3, 1], [False, True])
    assert text.splitlines() == ["sample_index,true_label,is_positive,score", "0,3,0,0.5", "1,1,1,-1.0"]


# ------------------------------------------------------- protocol runner

def synthetic_split():
    rng = np.random.default_rng(0)
    pos = np.clip(0.3 + 0.05 * rng.standard_normal((24, 1, 32, 32)), 0, 1).astype(np.float32)
    neg = rng.random((24, 1, 32, 32)).astype(np.float32)
    test = np.concatenate([pos[12:], neg[12:]])
    labels = np.array([1] * 12 + [0] * 12)
    split = OneClassSplit(pos[:12], Dataset((test * 255).astype(np.uint8), labels), 1)
    return pos[:12], test, split


def test_run_trials_seeds_and_determinism(tmp_path):
    x_train, x_test, split = synthetic_split()
    proto = evaluate.Protocol(TrainConfig(arm="ae_svdd", epochs=1, batch_size=6, seed=3), scores_dir=str(tmp_path))
    a = evaluate.run_trials(proto, 2, (x_train, x_test, split))
    b = evaluate.run_trials(proto, 2, (x_train, x_test, split))
    assert len(a.rows) == 1 and len(a.rows[0].aucs) == 2
    assert evaluate.report_csv(a) == evaluate.report_csv(b)
    dumps = sorted(p.name for p in tmp_path.iterdir())
    assert dumps == ["scores_class1_ae_svdd_trial0.csv", "scores_class1_ae_svdd_trial1.csv"]
    # same seed twice -> identical AUC
    single = evaluate.run_trials(evaluate.Protocol(proto.train), 1, (x_train, x_test, split))
    assert single.rows[0].aucs[0] == a.rows[0].aucs[0]


def test_run_ablation_five_arms_with_shared_training():
    x_train, x_test, split = synthetic_split()
    proto = evaluate.Protocol(TrainConfig(epochs=1, batch_size=6, k=8))
    rep = evaluate.run_ablation(proto, 1, (x_train, x_test, split))
    assert rep.arms == list(pipeline.ARMS)
    assert all(len(r.aucs) == 1 and 0.0 <= r.aucs[0] <= 1.0 for r in rep.rows)


def test_diverged_trial_is_recorded(monkeypatch):
    x_train, x_test, split = synthetic_split()
    calls = {"n": 0}
    real_train = pipeline.train

    def flaky(images, cfg, progress=None):
        calls["n"] += 1
        if calls["n"] == 1:
            raise pipeline.TrainingDivergenceError("loss became non-finite", 0, 0)
        return real_train(images, cfg)

    monkeypatch.setattr(pipeline, "train", flaky)
    proto = evaluate.Protocol(TrainConfig(arm="ae_svdd", epochs=1, batch_size=6))
    rep = evaluate.run_trials(proto, 2, (x_train, x_test, split))
    row = rep.rows[0]
    assert row.aucs[0] is None and row.aucs[1] is not None
    assert row.n_failed == 1 and "trial 0" in row.errors[0]
