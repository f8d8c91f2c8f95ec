from __future__ import annotations

import math

import numpy as np
import pytest

import qdrl.rl
from qdrl import algorithms as alg
from qdrl.config import ConfigError, EnvConfig, RunConfig
from qdrl.rl import Td3Config

# small networks and few gradient steps keep these runs to a second or two
FAST_TD3 = Td3Config(critic_steps=8, pg_steps=2, batch_size=32, actor_hidden=(8, 8), critic_hidden=(8, 8))


def small(algorithm, **kw):
    base = dict(algorithm=algorithm, budget=1024, n_centroids=32, policy_hidden=(8, 8), td3=FAST_TD3,
                cvt_samples_per_centroid=20, cvt_iterations=20)
    base.update(kw)
    return RunConfig(**base)


def test_budget_arithmetic_me():
    res = alg.run_map_elites(small("me", ga_batch_size=256))
    assert len(res.reports) == 4
    assert [r.evaluations for r in res.reports] == [256, 512, 768, 1024]
    assert all(r.offspring == {"ga": 256} for r in res.reports)


def test_budget_arithmetic_dcg():
    res = alg.run_dcg_me(small("dcg_me", budget=1280))
    assert len(res.reports) == 4
    assert np.diff([0] + [r.evaluations for r in res.reports]).tolist() == [320] * 4


def test_budget_overshoot_bound():
    cfg = small("me", budget=600, ga_batch_size=256)
    res = alg.run_map_elites(cfg)
    assert cfg.budget <= res.evaluations < cfg.budget + 256


@pytest.mark.parametrize("algorithm", ["me", "pga_me", "dcg_me", "dcrl_me", "ablation_ai", "ablation_actor"])
def test_conservation_and_determinism(algorithm):
    cfg = small(algorithm, budget=768)
    a = alg.run(cfg)
    b = alg.run(cfg, workers=3)
    assert a.total_improvement() == a.archive.metrics()[0]
    assert a.archive.genotypes.tobytes() == b.archive.genotypes.tobytes()
    assert a.archive.fitnesses.tobytes() == b.archive.fitnesses.tobytes()
    if a.learner is not None:
        assert a.learner.critics.tobytes() == b.learner.critics.tobytes()
        assert a.learner.actor.tobytes() == b.learner.actor.tobytes()
    for r in a.reports:
        assert a.archive.check_consistency()
        if cfg.algorithm in ("dcrl_me", "dcg_me", "ablation_ai", "ablation_actor"):
            assert 0 < r.mean_similarity <= 1
        else:
            assert math.isnan(r.mean_similarity)


def test_seed_changes_result():
    a = alg.run(small("me", budget=512))
    b = alg.run(small("me", budget=512, seed=1))
    assert not np.array_equal(a.archive.fitnesses, b.archive.fitnesses)


def test_dcrl_composition_and_stamping(monkeypatch):
    seen = []
    orig = qdrl.rl.ReplayBuffer.insert

    def spy(self, tr):
        seen.append(tr)
        return orig(self, tr)

    monkeypatch.setattr(qdrl.rl.ReplayBuffer, "insert", spy)
    sched = alg.Scheduler(small("dcrl_me"))
    sched.initialize()
    rep = sched.step()
    assert rep.offspring == {"ga": 128, "pg": 64, "ai": 64}
    tr = seen[-1]
    T = sched.env.episode_length
    assert len(tr) == 256 * T and tr.stamped
    ga = slice(0, 128 * T)
    np.testing.assert_array_equal(tr.target_descriptors[ga], tr.descriptors[ga])
    ai_targets = tr.target_descriptors[192 * T:].reshape(64, T, 2)
    assert np.all(ai_targets == ai_targets[:, :1])
    assert np.all((ai_targets >= 0) & (ai_targets <= 1))


def test_pg_targets_equal_parent_descriptors(monkeypatch):
    captured = {}
    orig = alg.Scheduler._pg

    def spy(self, parents, descriptors, indices):
        captured["d"] = descriptors.copy()
        return orig(self, parents, descriptors, indices)

    inserted = []
    orig_insert = qdrl.rl.ReplayBuffer.insert
    monkeypatch.setattr(alg.Scheduler, "_pg", spy)
    monkeypatch.setattr(qdrl.rl.ReplayBuffer, "insert", lambda self, tr: (inserted.append(tr), orig_insert(self, tr)))
    sched = alg.Scheduler(small("dcrl_me"))
    sched.initialize()
    sched.step()
    T = sched.env.episode_length
    tgt = inserted[-1].target_descriptors[128 * T:192 * T].reshape(64, T, 2)[:, 0]
    np.testing.assert_array_equal(tgt, captured["d"])


def test_dcg_actor_evaluation_only_feeds_buffer(monkeypatch):
    sched = alg.Scheduler(small("dcg_me"))
    sched.initialize()
    size0 = sched.buffer.size
    adds = []
    orig = sched.archive.add
    monkeypatch.setattr(sched.archive, "add", lambda *a: (adds.append(a), orig(*a))[1])
    rep = sched.step()
    T = sched.env.episode_length
    assert len(adds) == 256
    assert sched.buffer.size - size0 == (256 + 64) * T
    assert sum(rep.offspring.values()) == 256 and "ai" not in rep.offspring


def test_dcg_without_actor_evaluation_matches_ablation_ai():
    a = alg.run(small("dcg_me", budget=512, ae_batch_size=0))
    b = alg.run(small("ablation_ai", budget=512))
    assert a.archive.genotypes.tobytes() == b.archive.genotypes.tobytes()
    assert a.learner.critics.tobytes() == b.learner.critics.tobytes()


def test_pga_composition_and_no_similarity(monkeypatch):
    calls = []
    orig = qdrl.rl.similarity
    monkeypatch.setattr(qdrl.rl, "similarity", lambda *a, **k: (calls.append(1), orig(*a, **k))[1])
    sched = alg.Scheduler(small("pga_me"))
    assert sched.learner.critic_arch.input_dim == sched.env.state_dim + sched.env.action_dim
    assert sched.learner.actor_arch.input_dim == sched.env.state_dim
    sched.initialize()
    rep = sched.step()
    rep = sched.step()
    assert rep.offspring == {"ga": 128, "pg": 127, "ai": 1}
    assert calls == []


def test_ablation_architectures():
    sched = alg.Scheduler(small("ablation_actor"))
    env = sched.env
    assert sched.learner.actor_arch.input_dim == env.state_dim
    assert sched.learner.critic_arch.input_dim == env.state_dim + env.action_dim + env.descriptor_dim
    sched = alg.Scheduler(small("ablation_ai"))
    sched.initialize()
    rep = sched.step()
    assert rep.offspring == {"ga": 128, "pg": 128}


def test_wrappers_check_algorithm():
    with pytest.raises(ConfigError):
        alg.run_dcrl_me(small("me"))
    with pytest.raises(ValueError):
        alg.run_ablation(small("ablation_ai"), "nope")


def test_learner_not_mutated_by_variation(monkeypatch):
    import qdrl.variation as var
    snapshots = []
    orig = var.variation_pg_batch

    def spy(genotypes, pdesc, arch, learner, buffer, idx, lr):
        before = learner.critics.copy()
        out = orig(genotypes, pdesc, arch, learner, buffer, idx, lr)
        snapshots.append(np.array_equal(before, learner.critics))
        return out

    monkeypatch.setattr(alg, "variation_pg_batch", spy)
    sched = alg.Scheduler(small("dcrl_me"))
    sched.initialize()
    sched.step()
    assert snapshots and all(snapshots)


def test_stochastic_env_runs_deterministically():
    cfg = small("dcrl_me", budget=512, env=EnvConfig("point_mass_omni", action_noise=0.1))
    a, b = alg.run(cfg), alg.run(cfg, workers=2)
    assert a.archive.fitnesses.tobytes() == b.archive.fitnesses.tobytes()
