"""Deterministic replay of asynchronous interleavings.

A script is a list of ``(worker, READ|COMMIT)`` events.  Replaying it against
a step rule gives exact read versions ``D'(t)`` and delays ``nu = t - D'(t)``
for every write, which real threads cannot reproduce.  Plugged into the
engine's epoch loop (:func:`run_scripted`) it runs the same optimiser
arithmetic as the threaded path.

Script text format, one event per line::

    <worker-id> READ
    <worker-id> COMMIT
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import engine
from .data import Dataset
from .engine import DirectionFn, RunConfig, RunTrace, SharedState
from .model import LossModel

READ = "READ"
COMMIT = "COMMIT"

StepRule = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class InterleavingScript:
    events: tuple[tuple[int, str], ...]
    P: int

    def __post_init__(self):
        events = tuple((int(w), str(a).upper()) for w, a in self.events)
        object.__setattr__(self, "events", events)
        if self.P < 1:
            raise ScriptError("P must be >= 1")
        pending = [False] * self.P
        for pos, (w, act) in enumerate(events):
            if not 0 <= w < self.P:
                raise ScriptError(f"event {pos}: worker {w} outside 0..{self.P - 1}")
            if act == READ:
                if pending[w]:
                    raise ScriptError(f"event {pos}: worker {w} reads twice without committing")
                pending[w] = True
            elif act == COMMIT:
                if not pending[w]:
                    raise ScriptError(f"event {pos}: worker {w} commits without a read")
                pending[w] = False
            else:
                raise ScriptError(f"event {pos}: unknown action {act!r}")

    def commits_per_worker(self) -> list[int]:
        counts = [0] * self.P
        for w, act in self.events:
            if act == COMMIT:
                counts[w] += 1
        return counts

    def to_text(self) -> str:
        return "".join(f"{w} {a}\n" for w, a in self.events)

    @classmethod
    def parse(cls, text: str | Iterable[str], P: int | None = None) -> "InterleavingScript":
        lines = text.splitlines() if isinstance(text, str) else text
        events = []
        for lineno, line in enumerate(lines, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or not parts[0].lstrip("-").isdigit():
                raise ScriptError(f"line {lineno}: expected '<worker-id> READ|COMMIT'")
            events.append((int(parts[0]), parts[1].upper()))
        if P is None:
            P = max((w for w, _ in events), default=0) + 1
        return cls(tuple(events), P)


@dataclass(frozen=True)
class Commit:
    t: int
    writer: int
    read_version: int  # D'(t)
    nu: int  # t - D'(t)


@dataclass
class Timeline:
    commits: list[Commit] = field(default_factory=list)
    versions: list[np.ndarray] = field(default_factory=list)
    tau: int = 0  # largest t - D(t) over reads pending at any write


def simulate_epoch(script: InterleavingScript, step_rule: StepRule, x0) -> Timeline:
    """Replay ``script``; each commit applies ``step_rule(worker, x_now, x_read)``."""
    x = np.array(x0, dtype=np.float64)
    tl = Timeline(versions=[x])
    pending: dict[int, int] = {}
    t = 0
    for w, act in script.events:
        if act == READ:
            pending[w] = t
            continue
        D = pending[w]
        t += 1
        tl.tau = max(tl.tau, t - min(pending.values()))
        del pending[w]
        new = step_rule(w, tl.versions[-1], tl.versions[D])
        tl.versions.append(new)
        tl.commits.append(Commit(t, w, D, t - D))
    return tl


def max_staleness(timeline: Timeline) -> int:
    if not timeline.commits:
        raise ValueError("timeline has no commits")
    return max(c.nu for c in timeline.commits)


# -- script generators ---------------------------------------------------


def sequential(P: int, L: int) -> InterleavingScript:
    """Each worker runs its ``L`` iterations alone, worker 0 first."""
    events = [(p, a) for p in range(P) for _ in range(L) for a in (READ, COMMIT)]
    return InterleavingScript(tuple(events), P)


def bounded_delay(P: int, L: int, window: int) -> InterleavingScript:
    """Workers take turns cyclically with ``window`` reads in flight.

    Every write in steady state has delay exactly ``window`` (capped at
    ``P``).  The order in which workers consume their minibatches is the same
    for every window, so only the staleness changes.
    """
    if window < 1:
        raise ScriptError("window must be >= 1")
    window = min(window, P)
    order = [p for _ in range(L) for p in range(P)]
    events: list[tuple[int, str]] = []
    inflight: list[int] = []
    for w in order:
        if len(inflight) == window:
            events.append((inflight.pop(0), COMMIT))
        events.append((w, READ))
        inflight.append(w)
    events.extend((w, COMMIT) for w in inflight)
    return InterleavingScript(tuple(events), P)


def round_robin(P: int, L: int) -> InterleavingScript:
    """All workers read, then commit-and-reread in turn."""
    return bounded_delay(P, L, P)


def adversarial(P: int, L: int) -> InterleavingScript:
    """Worker 0 reads first and writes only after everyone else has finished."""
    events: list[tuple[int, str]] = [(0, READ)]
    for p in range(1, P):
        for _ in range(L):
            events += [(p, READ), (p, COMMIT)]
    events.append((0, COMMIT))
    for _ in range(L - 1):
        events += [(0, READ), (0, COMMIT)]
    return InterleavingScript(tuple(events), P)


def random_script(P: int, L: int, seed: int = 0) -> InterleavingScript:
    """Uniformly random legal interleaving."""
    rng = np.random.Generator(np.random.Philox(seed))
    left = [L] * P
    pending = [False] * P
    events: list[tuple[int, str]] = []
    while True:
        ready = [p for p in range(P) if pending[p] or left[p] > 0]
        if not ready:
            break
        p = ready[int(rng.integers(len(ready)))]
        if pending[p]:
            events.append((p, COMMIT))
            pending[p] = False
        else:
            events.append((p, READ))
            pending[p] = True
            left[p] -= 1
    return InterleavingScript(tuple(events), P)


# -- optimiser integration -----------------------------------------------


def optimizer_step_rule(direction: DirectionFn, eta: float, samples: np.ndarray) -> StepRule:
    """Step rule running the engine kernel on each worker's next minibatch."""
    counters = [0] * samples.shape[0]
    buf: list[np.ndarray] = []

    def rule(worker: int, x: np.ndarray, stale: np.ndarray) -> np.ndarray:
        if not buf:
            buf.append(np.empty_like(x))
        out = buf[0]
        i = counters[worker]
        counters[worker] += 1
        direction(samples[worker, i], stale, out)
        return x + eta * out

    return rule


ScriptFactory = Callable[[int, int, int], InterleavingScript]


def scripted_executor(factory: ScriptFactory, timelines: list | None = None):
    """Engine epoch executor replaying ``factory(P, L, epoch)`` each epoch."""
    epoch = [0]

    def execute(state: SharedState, direction: DirectionFn, eta: float,
                samples: np.ndarray) -> None:
        P, L = samples.shape[:2]
        script = factory(P, L, epoch[0])
        epoch[0] += 1
        if script.P != P or script.commits_per_worker() != [L] * P:
            raise ScriptError(f"script must give each of {P} workers exactly {L} commits")
        tl = simulate_epoch(script, optimizer_step_rule(direction, eta, samples), state.x)
        base = state.t
        for c, x in zip(tl.commits, tl.versions[1:]):
            state.x = x
            state._record(base + c.read_version, c.writer)
        state.x = np.array(tl.versions[-1])
        if timelines is not None:
            timelines.append(tl)

    return execute


def run_scripted(algo: str, config: RunConfig, model: LossModel, data: Dataset,
                 factory: ScriptFactory, timelines: list | None = None, **kw) -> RunTrace:
    """Run an optimiser with every epoch's interleaving fixed by ``factory``."""
    return engine.run(algo, config, model, data,
                      executor=scripted_executor(factory, timelines), **kw)
