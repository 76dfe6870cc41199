import math

import numpy as np
import pytest

from monoattn import autograd as ag
from monoattn import training
from monoattn.autograd import Tensor
from monoattn.lattice import ProbLattice, brute_force_total_prob
from monoattn.model import MonoAttnTransducer
from monoattn.monotonic import full_support
from monoattn.nn import AdamConfig
from monoattn.training import (
    BucketSampler,
    TrainConfig,
    Trainer,
    posterior_points,
    prior_frame_alignment,
    train,
    transducer_nll,
)
from monoattn.verify import algorithm_gradient_check, tiny_model_config


def model_and_batch(seed=0, **kw):
    model = MonoAttnTransducer(tiny_model_config(seed=seed, **kw))
    rng = np.random.default_rng(seed)
    src = rng.integers(0, 4, size=(3, 6))
    tgt = rng.integers(0, 4, size=(3, 4))
    return model, src, tgt


def test_loss_is_negative_log_probability():
    model, src, tgt = model_and_batch()
    trainer = Trainer(model, TrainConfig(mode="posterior", chunk_frames=2))
    align = trainer.infer_posterior(src, tgt)
    with ag.no_grad():
        enc = model.encode(src, 2)
        lp = model.join(enc.pooled, model.predict(tgt, enc.states, align)).data
        per = transducer_nll(Tensor(lp), tgt).data
    for b in range(3):
        ref = brute_force_total_prob(ProbLattice(lp[b], tgt[b]))
        assert math.exp(-per[b]) == pytest.approx(ref, rel=1e-10)


def test_two_pass_gradient_and_no_gradient_contract():
    worst, count, fails, info = algorithm_gradient_check(seed=1)
    assert count > 100 and not fails, fails[:5]
    assert info == {"prior_pass_nodes": 0, "grads_untouched_by_prior_pass": True,
                    "grads_identical_without_prior_pass": True}


def test_forward_pass_counts():
    model, src, tgt = model_and_batch()
    prior = Trainer(model, TrainConfig(mode="prior", chunk_frames=2))
    prior.train_step_prior(src, tgt)
    assert prior.forward_passes == 1
    post = Trainer(model, TrainConfig(mode="posterior", chunk_frames=2))
    post.train_step_posterior(src, tgt)
    assert post.forward_passes == 2


def test_prior_with_full_support_reduces_to_offline():
    model, src, tgt = model_and_batch()
    # a chunk covering the whole source puts every prior row on the last frame
    assert np.abs(prior_frame_alignment("diagonal", 6, 4, 6, 1) - full_support(6, 4).probs)[1:].max() < 1e-12
    big = Trainer(model, TrainConfig(mode="prior", chunk_frames=6)).loss(src, tgt).item()
    off = Trainer(model, TrainConfig(mode="offline")).loss(src, tgt).item()
    assert big == pytest.approx(off, abs=1e-12)


def test_degenerate_posterior_is_one_hot():
    # every cell certain: emit y1 at point 0, y2 at point 1, then blanks
    T, U, V = 3, 2, 3
    lp = np.full((1, T, U + 1, V + 1), -np.inf)
    lp[..., V] = 0.0
    lp[0, 0, 0, :] = -np.inf
    lp[0, 0, 0, 1] = 0.0
    lp[0, 1, 1, :] = -np.inf
    lp[0, 1, 1, 2] = 0.0
    post, ok = posterior_points(lp, np.array([[1, 2]]))
    assert ok.all()
    assert np.array_equal(post[0], [[1, 0, 0], [1, 0, 0], [0, 1, 0]])


def test_posterior_fallback_counts(monkeypatch):
    model, src, tgt = model_and_batch()
    trainer = Trainer(model, TrainConfig(mode="posterior", chunk_frames=2))
    real = training.posterior_points

    def broken(lp, targets):
        post, ok = real(lp, targets)
        ok = ok.copy()
        ok[1] = False
        post[1] = np.nan
        return post, ok

    monkeypatch.setattr(training, "posterior_points", broken)
    align = trainer.infer_posterior(src, tgt)
    assert trainer.fallback_count == 1
    assert np.array_equal(align[1], trainer.prior_alignment(6, 4))
    assert np.all(np.isfinite(align))


def test_alignment_is_chunk_synchronised():
    model, src, tgt = model_and_batch(chunk_frames=4, decision_step=2)
    trainer = Trainer(model, TrainConfig(mode="posterior", chunk_frames=4))
    align = trainer.infer_posterior(src, tgt)
    # frames 4 and 6 (1-based) are the only chunk-final frames for T=6, C=4
    assert np.all(align[..., [0, 1, 2, 4]] == 0)
    assert np.abs(align.sum(-1) - 1).max() < 1e-12
    assert np.all(align[:, 0, 3] == 1)


def test_loss_decreases_monotonically_on_fixed_batch():
    wins = 0
    for seed in range(5):
        model, src, tgt = model_and_batch(seed=seed)
        trainer = Trainer(model, TrainConfig(mode="posterior", chunk_frames=2,
                                             optimizer=AdamConfig(warmup_steps=20)))
        losses = [trainer.step(src, tgt)[0] for _ in range(50)]
        wins += all(b < a for a, b in zip(losses, losses[1:]))
    assert wins >= 4


def test_determinism():
    def run():
        model, src, tgt = model_and_batch(seed=3)
        pairs = [(s, t) for s, t in zip(src, tgt)]
        return [r["loss"] for r in train(model, pairs, TrainConfig(mode="posterior", chunk_frames=2,
                                                                   steps=10, batch_size=2, log_every=0))]
    assert run() == run()


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="streaming")
    with pytest.raises(ValueError):
        TrainConfig(mode="posterior", chunk_frames=None)
    with pytest.raises(ValueError):
        TrainConfig(prior="gaussian")
    assert TrainConfig(mode="offline", chunk_frames=4).chunk_frames is None


def test_sampler_skips_empty_targets_and_buckets_lengths(caplog):
    pairs = [(np.arange(3), np.arange(2)), (np.arange(3), np.array([], dtype=int)),
             (np.arange(4), np.arange(4))]
    sampler = BucketSampler(pairs, 4, 0)
    assert "empty target" in caplog.text
    for _ in range(10):
        src, tgt = sampler.sample()
        assert src.shape[0] == 4 and len({len(s) for s in src}) == 1
    with pytest.raises(ValueError):
        BucketSampler([(np.arange(3), np.array([], dtype=int))], 2, 0)


def test_training_log_records(tmp_path):
    model, src, tgt = model_and_batch()
    pairs = [(s, t) for s, t in zip(src, tgt)]
    train(model, pairs, TrainConfig(mode="prior", chunk_frames=2, steps=3, batch_size=2, log_every=0),
          log_path=tmp_path / "log.jsonl")
    import json

    recs = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in recs] == [1, 2, 3]
    assert set(recs[0]) >= {"step", "loss", "fallbacks", "grad_norm", "wall_time", "lr"}


def test_pretrain_then_finetune(tmp_path):
    from monoattn.training import finetune_streaming, pretrain_offline

    model, src, tgt = model_and_batch()
    pairs = [(s, t) for s, t in zip(src, tgt)]
    pretrain_offline(model, pairs, steps=2, batch_size=2, checkpoint=tmp_path / "off.ckpt")
    tuned = finetune_streaming(tmp_path / "off.ckpt", pairs,
                               TrainConfig(mode="posterior", chunk_frames=2, steps=2, batch_size=2,
                                           log_every=0),
                               model_overrides={"lookahead_chunks": 1})
    assert tuned.config.lookahead_chunks == 1
    with pytest.raises(ValueError):
        finetune_streaming(tmp_path / "off.ckpt", pairs, TrainConfig(mode="offline"))


@pytest.mark.slow
def test_curriculum_beats_scratch():
    from monoattn.experiments import CurriculumConfig, curriculum_run

    results = [curriculum_run(CurriculumConfig(), seed) for seed in range(5)]
    wins = sum(r["finetune_steps"] is not None and
               (r["scratch_steps"] is None or r["finetune_steps"] < r["scratch_steps"]) for r in results)
    assert wins >= 4, results
