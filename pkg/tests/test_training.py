import dataclasses
import json

import numpy as np
import pytest

from conftest import make_record, render
from triscore import EncoderConfig, build_vocab
from triscore.checkpoint import checkpoint_load, model_digest
from triscore.encoder import backward, init_model, is_head_param, zeros_like_params
from triscore.sequences import InputFormat, TRAINING_FORMAT_ORDER
from triscore.training import (
    AdamOptimizer,
    Stage,
    TrainConfig,
    TrainingDiverged,
    balanced_steps,
    joint_losses,
    joint_step,
    run_pipeline,
    split_three_ways,
    train_stage,
)

WORDS = "alpha beta gamma delta epsilon zeta eta theta iota kappa".split()


def corpus_records(n, seed=0, with_gold=True):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        pick = lambda: " ".join(rng.choice(WORDS, size=rng.integers(2, 6)))
        records.append(
            make_record(
                segment_id=f"r{i:04d}",
                hypothesis=pick(),
                source=pick(),
                reference=pick(),
                gold=float(rng.normal()) if with_gold else None,
            )
        )
    return records


@pytest.fixture(scope="module")
def train_vocab():
    return build_vocab([" ".join(WORDS)], 32)


@pytest.fixture
def train_config():
    return TrainConfig(stage=Stage.PRETRAIN, batch_size=2, lr_encoder=1e-3,
                       lr_head=3e-3, epochs=1, seed=0)


def small_model(vocab, seed=0):
    cfg = EncoderConfig(vocab_size=vocab.size, hidden_width=8, n_layers=1,
                        n_heads=2, max_len=24, head_dims=(8, 4, 1), seed=seed)
    return init_model(cfg)


# ---------------------------------------------------------------------------
# splitting and batching

def test_split_three_ways_even():
    parts = split_three_ways(list(range(9)), seed=0)
    assert [len(p) for p in parts] == [3, 3, 3]


def test_split_three_ways_remainder():
    parts = split_three_ways(list(range(10)), seed=0)
    assert sorted(len(p) for p in parts) == [3, 3, 4]
    assert [len(p) for p in parts] == [4, 3, 3]  # fixed assignment: first parts absorb extras


def test_split_three_ways_disjoint_union():
    data = list(range(11))
    parts = split_three_ways(data, seed=5)
    merged = sorted(x for p in parts for x in p)
    assert merged == data
    assert len(set(map(tuple, [parts[0], parts[1], parts[2]]))) == 3


def test_split_three_ways_deterministic():
    data = list(range(10))
    assert split_three_ways(data, seed=3) == split_three_ways(data, seed=3)
    assert split_three_ways(data, seed=3) != split_three_ways(data, seed=4)


def test_split_three_ways_too_small():
    with pytest.raises(ValueError, match="at least 3"):
        split_three_ways([1, 2], seed=0)


def test_balanced_steps_equal_counts_and_single_use():
    parts = [list(range(7)), list(range(100, 107)), list(range(200, 207))]
    rng = np.random.default_rng(0)
    seen = [[], [], []]
    steps = list(balanced_steps(parts, 2, rng))
    assert len(steps) == 3  # 7 // 2, leftover dropped
    for triple in steps:
        assert [len(b) for b in triple] == [2, 2, 2]
        for fmt_idx, batch in enumerate(triple):
            seen[fmt_idx].extend(batch)
    for fmt_idx, consumed in enumerate(seen):
        assert len(consumed) == len(set(consumed)) == 6  # each record at most once


def test_balanced_steps_total_consumption_per_step():
    parts = [list(range(6))] * 3
    steps = list(balanced_steps(parts, 2, np.random.default_rng(1)))
    assert all(sum(len(b) for b in triple) == 6 for triple in steps)


# ---------------------------------------------------------------------------
# joint objective

def make_format_batches(vocab, records, batch_size=2):
    golds = [r.gold for r in records]
    out = []
    for fmt in TRAINING_FORMAT_ORDER:
        out.append([
            (render(r, vocab, fmt), g) for r, g in zip(records[:batch_size], golds[:batch_size])
        ])
    return out


def test_joint_loss_total_is_exact_sum(train_vocab):
    model = small_model(train_vocab)
    batches = make_format_batches(train_vocab, corpus_records(4, seed=1))
    (l_ref, l_src, l_srcref), total, _ = joint_losses(model, batches)
    assert total == l_ref + l_src + l_srcref


def test_duplicate_batches_triple_the_loss(train_vocab):
    model = small_model(train_vocab)
    records = corpus_records(2, seed=2)
    same = [(render(r, train_vocab, InputFormat.SRC_REF), r.gold) for r in records]
    _, total, _ = joint_losses(model, [same, same, same])
    single, _ = backward(model, same)
    assert total == 3.0 * single


def test_joint_gradient_equals_sum_of_per_format_gradients(train_vocab):
    model = small_model(train_vocab)
    batches = make_format_batches(train_vocab, corpus_records(4, seed=3))
    _, _, joint = joint_losses(model, batches)
    separate = zeros_like_params(model)
    for batch in batches:  # same accumulation order as the joint path
        backward(model, batch, grads=separate)
    for name in joint:
        assert np.array_equal(joint[name], separate[name])


def test_joint_step_zero_head_zero_targets(train_vocab):
    model = small_model(train_vocab)
    for name in model.params:
        if is_head_param(name):
            model.params[name][:] = 0.0
    records = [dataclasses.replace(r, gold=0.0) for r in corpus_records(2, seed=4)]
    batches = make_format_batches(train_vocab, records)
    opt = AdamOptimizer(model, TrainConfig())
    l_ref, l_src, l_srcref, total = joint_step(model, opt, batches)
    assert total == 0.0
    # zero loss -> zero gradients -> Adam moves nothing
    assert np.array_equal(model.params["head.b3"], np.zeros(1))


def test_frozen_encoder_group_is_bit_identical(train_vocab):
    model = small_model(train_vocab)
    before = {k: v.copy() for k, v in model.params.items()}
    cfg = TrainConfig(lr_encoder=0.0, lr_head=1e-3)
    opt = AdamOptimizer(model, cfg)
    joint_step(model, opt, make_format_batches(train_vocab, corpus_records(4, seed=5)))
    for name in model.params:
        if is_head_param(name):
            assert not np.array_equal(model.params[name], before[name]), name
        else:
            assert np.array_equal(model.params[name], before[name]), name


def test_frozen_head_group_is_bit_identical(train_vocab):
    model = small_model(train_vocab)
    before = {k: v.copy() for k, v in model.params.items()}
    cfg = TrainConfig(lr_encoder=1e-3, lr_head=0.0)
    opt = AdamOptimizer(model, cfg)
    joint_step(model, opt, make_format_batches(train_vocab, corpus_records(4, seed=6)))
    for name in model.params:
        if is_head_param(name):
            assert np.array_equal(model.params[name], before[name]), name
        else:
            assert not np.array_equal(model.params[name], before[name]), name


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_loss_aborts(train_vocab):
    model = small_model(train_vocab)
    records = corpus_records(2, seed=7)
    bad = [dataclasses.replace(r, gold=1e200) for r in records]
    batches = make_format_batches(train_vocab, bad)
    opt = AdamOptimizer(model, TrainConfig())
    with pytest.raises(TrainingDiverged, match="non-finite"):
        joint_step(model, opt, batches)


# ---------------------------------------------------------------------------
# train_stage

def test_train_stage_step_count(train_vocab, train_config):
    model = small_model(train_vocab)
    # 6 records -> parts of 2 -> one step per epoch at batch_size 2
    _, history = train_stage(model, corpus_records(6, seed=8), train_config, train_vocab)
    assert len(history.steps) == 1
    assert history.steps[0].step == 1


def test_train_stage_requires_labels(train_vocab, train_config):
    records = corpus_records(6, seed=9, with_gold=False)
    with pytest.raises(ValueError, match="gold"):
        train_stage(small_model(train_vocab), records, train_config, train_vocab)
    with pytest.raises(ValueError, match="empty"):
        train_stage(small_model(train_vocab), [], train_config, train_vocab)


def test_train_stage_history_identity_and_batch_balance(train_vocab):
    cfg = TrainConfig(stage=Stage.PRETRAIN, batch_size=2, epochs=3, seed=1)
    model = small_model(train_vocab)
    _, history = train_stage(model, corpus_records(18, seed=10), cfg, train_vocab)
    assert len(history.steps) == 9
    for rec in history.steps:
        assert rec.loss_total == rec.loss_ref + rec.loss_src + rec.loss_src_ref
        assert rec.batch_ref == rec.batch_src == rec.batch_src_ref == 2


def test_train_stage_final_loss_not_above_first_on_learnable_task():
    # endpoint comparison only; a monotone trend is not required
    from triscore import build_vocab as bv, make_graded_corpus

    corpus = make_graded_corpus(n_segments=60, n_systems=4, directions=("en-de",), seed=30)
    vocab = bv([t for r in corpus for t in (r.source, r.hypothesis, r.reference)], 2000)
    model = small_model(vocab)
    cfg = TrainConfig(stage=Stage.PRETRAIN, batch_size=8, epochs=3, seed=0)
    _, history = train_stage(model, corpus, cfg, vocab)
    assert history.steps[-1].loss_total <= history.steps[0].loss_total


def test_train_stage_deterministic_given_seed(train_vocab, train_config):
    runs = []
    for _ in range(2):
        model = small_model(train_vocab)
        _, history = train_stage(model, corpus_records(9, seed=11), train_config, train_vocab)
        runs.append((model_digest(model), [r.loss_total for r in history.steps]))
    assert runs[0] == runs[1]


def test_train_stage_writes_checkpoint_and_history(tmp_path, train_vocab, train_config):
    model = small_model(train_vocab)
    ckpt = tmp_path / "stage.ckpt"
    hist = tmp_path / "stage.history.jsonl"
    _, history = train_stage(model, corpus_records(9, seed=12), train_config, train_vocab,
                             checkpoint_path=ckpt, history_path=hist)
    assert history.checkpoint_path == str(ckpt)
    loaded = checkpoint_load(ckpt)
    assert model_digest(loaded) == model_digest(model)
    lines = [json.loads(l) for l in hist.read_text().splitlines()]
    assert len(lines) == len(history.steps)
    for line in lines:
        assert line["loss_total"] == line["loss_ref"] + line["loss_src"] + line["loss_src_ref"]


# ---------------------------------------------------------------------------
# pipeline

def pipeline_inputs(train_vocab):
    enc = EncoderConfig(vocab_size=train_vocab.size, hidden_width=8, n_layers=1,
                        n_heads=2, max_len=24, head_dims=(8, 4, 1), seed=0)
    stage_cfgs = {
        stage: TrainConfig(stage=stage, batch_size=2, epochs=1, seed=0) for stage in Stage
    }
    return enc, stage_cfgs


def test_pipeline_three_seeds_chain_and_counts(tmp_path, train_vocab):
    enc, stage_cfgs = pipeline_inputs(train_vocab)
    result = run_pipeline(
        enc, train_vocab,
        corpus_records(9, seed=20), corpus_records(9, seed=21), corpus_records(9, seed=22),
        stage_cfgs, n_seeds=3, base_seed=0, out_dir=tmp_path,
    )
    assert len(result.final_models) == 3
    assert len(result.final_checkpoints) == 3
    assert len(result.stage_runs) == 9
    by_seed = {}
    for run in result.stage_runs:
        by_seed.setdefault(run.seed, []).append(run)
    for seed, runs in by_seed.items():
        assert [r.stage for r in runs] == [Stage.PRETRAIN, Stage.DA_FINETUNE, Stage.MQM_FINETUNE]
        # stage k+1 starts exactly from stage k's final parameters
        assert runs[1].init_digest == runs[0].final_digest
        assert runs[2].init_digest == runs[1].final_digest


def test_pipeline_without_mqm_returns_da_checkpoints(tmp_path, train_vocab):
    enc, stage_cfgs = pipeline_inputs(train_vocab)
    result = run_pipeline(
        enc, train_vocab,
        corpus_records(9, seed=23), corpus_records(9, seed=24), None,
        stage_cfgs, n_seeds=2, base_seed=0, out_dir=tmp_path,
    )
    assert all(path.endswith("_da.ckpt") for path in result.final_checkpoints)
    assert len(result.stage_runs) == 4


def test_pipeline_zero_epoch_stage_preserves_checkpoint_bytes(tmp_path, train_vocab):
    enc, stage_cfgs = pipeline_inputs(train_vocab)
    stage_cfgs[Stage.MQM_FINETUNE] = dataclasses.replace(
        stage_cfgs[Stage.MQM_FINETUNE], epochs=0
    )
    run_pipeline(
        enc, train_vocab,
        corpus_records(9, seed=25), corpus_records(9, seed=26), corpus_records(9, seed=27),
        stage_cfgs, n_seeds=1, base_seed=0, out_dir=tmp_path,
    )
    da = (tmp_path / "seed0_da.ckpt").read_bytes()
    mqm = (tmp_path / "seed0_mqm.ckpt").read_bytes()
    assert da == mqm


def test_pipeline_seeds_differ(tmp_path, train_vocab):
    enc, stage_cfgs = pipeline_inputs(train_vocab)
    data = corpus_records(9, seed=28)
    result = run_pipeline(enc, train_vocab, data, None, None, stage_cfgs,
                          n_seeds=3, base_seed=0)
    probe = render(data[0], train_vocab)
    from triscore.encoder import forward

    preds = {forward(m, probe) for m in result.final_models}
    assert len(preds) > 1


def test_pipeline_requires_some_dataset(train_vocab):
    enc, stage_cfgs = pipeline_inputs(train_vocab)
    with pytest.raises(ValueError, match="at least one stage"):
        run_pipeline(enc, train_vocab, None, None, None, stage_cfgs, n_seeds=1)


def test_pipeline_requires_config_for_each_used_stage(train_vocab):
    enc, stage_cfgs = pipeline_inputs(train_vocab)
    del stage_cfgs[Stage.MQM_FINETUNE]
    with pytest.raises(ValueError, match="no training config.*mqm"):
        run_pipeline(enc, train_vocab, None, None, corpus_records(9, seed=29),
                     stage_cfgs, n_seeds=1)
