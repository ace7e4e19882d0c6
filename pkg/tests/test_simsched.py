import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asysqn.data import Dataset
from asysqn.engine import RunConfig, run
from asysqn.model import LossModel
from asysqn.simsched import (COMMIT, READ, InterleavingScript, ScriptError, adversarial,
                             bounded_delay, max_staleness, random_script, round_robin,
                             run_scripted, sequential, simulate_epoch)

from conftest import rng

LS = LossModel.from_name("ls")

# workers 1, 2, 3 read at versions 1, 0, 0; worker 2 then writes at t = 2
DEMO_SCRIPT = """\
2 READ
3 READ
1 READ
1 COMMIT
1 READ
2 COMMIT
"""


def count_rule(worker, x, stale):
    return x + 1.0


def replay(script):
    return simulate_epoch(script, count_rule, np.zeros(1))


class TestReplay:
    def test_three_worker_demo(self):
        tl = replay(InterleavingScript.parse(DEMO_SCRIPT))
        assert [(c.t, c.writer, c.read_version, c.nu) for c in tl.commits] == \
            [(1, 1, 0, 1), (2, 2, 0, 2)]
        assert tl.tau == 2
        assert max_staleness(tl) == 2

    def test_single_worker_alternating(self):
        tl = replay(sequential(1, 6))
        assert [c.nu for c in tl.commits] == [1] * 6
        assert max_staleness(tl) == 1

    def test_all_read_then_commit_in_order(self):
        P = 5
        events = [(p, READ) for p in range(P)] + [(p, COMMIT) for p in range(P)]
        tl = replay(InterleavingScript(tuple(events), P))
        assert [c.nu for c in tl.commits] == list(range(1, P + 1))

    def test_round_robin(self):
        assert max_staleness(replay(round_robin(4, 3))) == 4

    @pytest.mark.parametrize("window", [1, 2, 3, 4, 8])
    def test_bounded_delay_steady_state(self, window):
        tl = replay(bounded_delay(8, 5, window))
        nus = [c.nu for c in tl.commits]
        assert max(nus) == window
        assert nus[window:-window] == [window] * (len(nus) - 2 * window)

    def test_adversarial(self):
        tl = replay(adversarial(3, 4))
        first = next(c for c in tl.commits if c.writer == 0)
        assert first.nu == 2 * 4 + 1 == max_staleness(tl)

    def test_stale_read_is_used(self):
        script = InterleavingScript.parse("0 READ\n1 READ\n0 COMMIT\n1 COMMIT\n")
        tl = simulate_epoch(script, lambda w, x, stale: x + stale + 1.0, np.zeros(1))
        # worker 1 read version 0 (x=0) although x=1 when it commits
        assert [v[0] for v in tl.versions] == [0.0, 1.0, 2.0]

    def test_empty_timeline(self):
        with pytest.raises(ValueError):
            max_staleness(replay(InterleavingScript((), 2)))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), P=st.integers(1, 8), L=st.integers(1, 12))
def test_delay_never_exceeds_tau(seed, P, L):
    script = random_script(P, L, seed)
    assert script.commits_per_worker() == [L] * P
    tl = replay(script)
    assert all(1 <= c.nu <= tl.tau for c in tl.commits)
    assert tl.tau <= L * P


class TestScripts:
    def test_text_round_trip(self):
        s = random_script(3, 4, seed=1)
        assert InterleavingScript.parse(s.to_text(), P=3) == s

    @pytest.mark.parametrize("text", ["0 COMMIT\n", "0 READ\n0 READ\n", "0 WRITE\n", "x READ\n",
                                      "0 READ extra\n"])
    def test_invalid(self, text):
        with pytest.raises(ScriptError):
            InterleavingScript.parse(text)

    def test_worker_out_of_range(self):
        with pytest.raises(ScriptError):
            InterleavingScript(((3, READ),), 2)

    def test_bad_window(self):
        with pytest.raises(ScriptError):
            bounded_delay(2, 2, 0)


@pytest.fixture(scope="module")
def quad():
    g = rng(0)
    z = g.standard_normal((120, 3))
    return Dataset(z, z @ np.ones(3) + 0.1 * g.standard_normal(120))


def strip(trace):
    return [dataclasses.replace(r, wall_ms=0.0) for r in trace.records]


@pytest.mark.parametrize("algo", ["asysqn", "asysvrg", "sgd"])
def test_sequential_script_matches_engine(quad, algo):
    cfg = RunConfig(eta=0.05, b=4, L=30, P=1, epochs=8, seed=2)
    a = run(algo, cfg, LS, quad, f_star=0.0)
    b = run_scripted(algo, cfg, LS, quad, lambda P, L, e: sequential(P, L), f_star=0.0)
    assert strip(a) == strip(b)
    np.testing.assert_array_equal(a.x, b.x)


def test_scripted_staleness_reaches_trace(quad):
    cfg = RunConfig(eta=0.01, b=4, L=5, P=4, epochs=3)
    timelines = []
    tr = run_scripted("asysqn", cfg, LS, quad, lambda P, L, e: round_robin(P, L), timelines,
                      f_star=0.0)
    assert len(timelines) == 3
    assert all(r.max_staleness == 4 - 1 for r in tr.records)


def test_script_must_match_config(quad):
    cfg = RunConfig(eta=0.01, b=4, L=5, P=2, epochs=1)
    with pytest.raises(ScriptError):
        run_scripted("asysqn", cfg, LS, quad, lambda P, L, e: sequential(P, L + 1), f_star=0.0)
