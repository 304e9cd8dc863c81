"""Cross-backend equivalence: the compiled kernel must reproduce the
pure-Python driver bitwise, trace field by trace field."""

import numpy as np
import pytest

import banditxd as bx
from banditxd import PolicyConfig
from banditxd.engine import resolve_backend

pytestmark = pytest.mark.skipif(
    not bx.kernel_available(), reason="compiled kernel not built"
)


def build_instances():
    docs = {
        "stationary": {
            "horizon": 600,
            "features": 2,
            "arrival": {"kind": "stationary", "p": [0.3, 0.7]},
            "rewards": [
                [{"kind": "bernoulli", "mean": 0.25}, {"kind": "bernoulli", "mean": 0.75}],
                [
                    {"kind": "truncated-gaussian", "mean": 0.4, "sd": 0.15},
                    {"kind": "truncated-gaussian", "mean": 0.7, "sd": 0.1},
                ],
            ],
        },
        "seasonal": {
            "horizon": 601,  # odd horizon exercises the floor(n/2) boundary
            "features": 3,
            "arrival": {
                "kind": "seasonal-block",
                "blocks": [[5, [0.6, 0.3, 0.1]], [2, [0.1, 0.2, 0.7]]],
            },
            "rewards": [
                [{"kind": "bernoulli", "mean": 0.2}, {"kind": "bernoulli", "mean": 0.9}],
                [{"kind": "point", "value": 0.4}, {"kind": "point", "value": 0.6}],
                [{"kind": "bernoulli", "mean": 0.55}, {"kind": "bernoulli", "mean": 0.45}],
            ],
        },
        "oblivious": {
            "horizon": 512,
            "features": 2,
            "arrival": {
                "kind": "oblivious-sequence",
                "sequence": [1 + (t * 7 % 3 == 0) for t in range(512)],
            },
            "rewards": [
                [{"kind": "bernoulli", "mean": 0.3}, {"kind": "bernoulli", "mean": 0.8}],
                [{"kind": "bernoulli", "mean": 0.5}, {"kind": "bernoulli", "mean": 0.5}],
            ],
        },
    }
    return {name: bx.build_instance(doc) for name, doc in docs.items()}


INSTANCES = build_instances()
POLICIES = [
    PolicyConfig(kind="conse", alpha=0.0),
    PolicyConfig(kind="conse", alpha=0.5),
    PolicyConfig(kind="conse", alpha=1.0),
    PolicyConfig(kind="dpconse", alpha=0.5, epsilon=1.0),
    PolicyConfig(kind="dpconse", alpha=0.0, epsilon=0.2),
    PolicyConfig(kind="rct", alpha=0.5),
    PolicyConfig(kind="ucb", alpha=0.5),
    PolicyConfig(kind="se-only", alpha=0.5),
]


def assert_traces_equal(a, b):
    assert a.final_regret == b.final_regret
    assert np.array_equal(a.checkpoint_ts, b.checkpoint_ts)
    assert np.array_equal(a.checkpoint_regret, b.checkpoint_regret)
    assert np.array_equal(a.estimates, b.estimates)
    assert a.est_flags == b.est_flags
    assert np.array_equal(a.est_samples, b.est_samples)
    assert np.array_equal(a.rct_counts, b.rct_counts)
    assert np.array_equal(a.fhat, b.fhat)
    assert np.array_equal(a.occurrences, b.occurrences)
    assert np.array_equal(a.subopt_first, b.subopt_first)
    assert np.array_equal(a.subopt_total, b.subopt_total)
    assert np.array_equal(a.elim_epoch, b.elim_epoch)
    assert np.array_equal(a.elim_arm, b.elim_arm)
    assert np.array_equal(a.viable, b.viable)
    assert a.t_min == b.t_min
    assert np.array_equal(a.t_j, b.t_j)
    assert a.events == b.events
    assert np.array_equal(a.actions, b.actions)
    assert a.noise_log == b.noise_log


@pytest.mark.parametrize("inst_name", sorted(INSTANCES))
@pytest.mark.parametrize("cfg", POLICIES, ids=lambda c: f"{c.kind}-a{c.alpha}-e{c.epsilon}")
def test_backends_produce_identical_traces(inst_name, cfg):
    inst = INSTANCES[inst_name]
    for rep in range(3):
        seed = (97, rep)
        py = bx.run_replication(
            inst, cfg, seed, backend="python", record_events=True, record_actions=True
        )
        cy = bx.run_replication(
            inst, cfg, seed, backend="cython", record_events=True, record_actions=True
        )
        assert_traces_equal(py, cy)


def test_reward_table_replay_matches(rng):
    inst = INSTANCES["oblivious"]
    table = rng.random((inst.n, 2))
    cfg = PolicyConfig(kind="dpconse", alpha=0.5, epsilon=1.0)
    py = bx.run_replication(
        inst, cfg, (101, 0), backend="python", reward_table=table, record_actions=True
    )
    cy = bx.run_replication(
        inst, cfg, (101, 0), backend="cython", reward_table=table, record_actions=True
    )
    assert_traces_equal(py, cy)


def test_backend_resolution(monkeypatch):
    assert resolve_backend("python") == "python"
    assert resolve_backend("cython") == "cython"
    monkeypatch.setenv("BANDITXD_BACKEND", "python")
    assert resolve_backend() == "python"
    monkeypatch.setenv("BANDITXD_BACKEND", "bogus")
    with pytest.raises(ValueError):
        resolve_backend()
