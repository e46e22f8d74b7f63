"""Seeded slot-level Monte-Carlo simulation of review-strategy protocols.

Every epoch starts with all automata at the first review slot, so epochs
are independent renewal cycles. Epochs are grouped into replications of
``batch_size``; replication ``r`` draws from PCG64 seeded by
``SeedSequence(master_seed, spawn_key=(r,))``. Within a replication the
slots are simulated in order, vectorized across that replication's epochs.
Every slot consumes one uniform per node per epoch, punishment slots of
unpunished public epochs included, so the stream layout depends only on the
configuration. All tallies are integers, which makes the merge exact and
order-independent.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .game import NetworkConfig
from .private import PrivateAnalysis, PrivateReviewProtocol
from .public import BestResponse, PublicAnalysis, PublicReviewProtocol, best_response_public

__all__ = [
    "ACK", "NO_ACK", "IDLE", "SUCCESS", "COLLISION", "TRANSMIT", "WAIT",
    "step_signals",
    "Automaton",
    "DeviantSpec",
    "SimConfig",
    "SimReport",
    "Comparison",
    "run",
    "compare_to_analytic",
    "replication_rng",
]

TRANSMIT, WAIT = "T", "W"
ACK, NO_ACK = "S", "F"
IDLE, SUCCESS, COLLISION = "0", "1", "e"

Protocol = Union[PrivateReviewProtocol, PublicReviewProtocol]


def _mode_of(protocol) -> str:
    if isinstance(protocol, PrivateReviewProtocol):
        return "private"
    if isinstance(protocol, PublicReviewProtocol):
        return "public"
    raise TypeError(f"not a review protocol: {protocol!r}")


def step_signals(actions: Sequence, mode: str):
    """Channel feedback for one slot of pure actions.

    ``actions`` holds "T"/"W" (or truthy/falsy). Private mode returns one
    "S"/"F" per node, with "S" only for a lone transmitter. Public mode
    returns the shared symbol "0" (idle), "1" (success) or "e" (collision).
    """
    sent = [a == TRANSMIT if isinstance(a, str) else bool(a) for a in actions]
    for a in actions:
        if isinstance(a, str) and a not in (TRANSMIT, WAIT):
            raise ValueError(f"unknown action {a!r}")
    n_tx = sum(sent)
    if mode == "private":
        return [ACK if s and n_tx == 1 else NO_ACK for s in sent]
    if mode == "public":
        return IDLE if n_tx == 0 else SUCCESS if n_tx == 1 else COLLISION
    raise ValueError(f"mode must be 'private' or 'public', got {mode!r}")


class Automaton:
    """Finite-state machine of one node following a review strategy.

    States are ``("review", slot, count)``, ``("cooperation", slot)`` (private
    only) and ``("punishment", slot)``. The review count saturates at
    ``threshold + 1`` because larger counts all pass.
    """

    def __init__(self, protocol: Protocol):
        self.mode = _mode_of(protocol)
        self.protocol = protocol
        self.review_len = protocol.review_len
        self.recip_len = protocol.recip_len if self.mode == "private" else protocol.punish_len
        self.threshold = protocol.threshold
        self.cap = self.threshold + 1
        self.p_c = protocol.cooperation_prob
        self.last_test_failed = None
        self.reset()

    def reset(self):
        self.phase = "review"
        self.slot = 0
        self.count = 0

    @property
    def state(self) -> tuple:
        if self.phase == "review":
            return ("review", self.slot, self.count)
        return (self.phase, self.slot)

    def transmit_prob(self) -> float:
        return 1.0 if self.phase == "punishment" else self.p_c

    def _counts(self, signal) -> bool:
        return signal == (ACK if self.mode == "private" else IDLE)

    def observe(self, signal) -> None:
        if self.phase == "review":
            if self._counts(signal):
                self.count = min(self.count + 1, self.cap)
            self.slot += 1
            if self.slot == self.review_len:
                self._end_review()
        else:
            self.slot += 1
            if self.slot == self.recip_len:
                self.reset()

    def _end_review(self):
        self.last_test_failed = self.count <= self.threshold
        if self.last_test_failed:
            self.phase, self.slot = "punishment", 0
        elif self.mode == "private":
            self.phase, self.slot = "cooperation", 0
        else:
            self.reset()

    def states(self) -> list:
        out = [("review", j, c) for j in range(self.review_len)
               for c in range(min(j, self.cap) + 1)]
        phases = ("cooperation", "punishment") if self.mode == "private" else ("punishment",)
        for phase in phases:
            out.extend((phase, j) for j in range(self.recip_len))
        return out


_KINDS = ("constant", "punish_aware", "adaptive", "best_response")


@dataclass(frozen=True)
class DeviantSpec:
    """A node that does not follow the protocol.

    ``constant``: transmits with ``p_d`` in every slot.
    ``punish_aware``: tracks the phase through its own automaton, transmits
    ``p_d`` in the phase named by ``defect_in`` ("review", or "reciprocation"
    meaning the private cooperation phase), ``p_c`` otherwise and ``p_r``
    while punished.
    ``adaptive``: public only; ``rule(slot, idle_count)`` gives the review
    transmission probability, ``p_r`` applies while punished.
    ``best_response``: public only; follows the dynamic-programming optimum.
    """

    node_index: int
    kind: str = "constant"
    p_d: Optional[float] = None
    p_r: float = 1.0
    defect_in: str = "review"
    rule: Optional[Callable[[int, int], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown deviant kind {self.kind!r}")
        if int(self.node_index) != self.node_index or self.node_index < 0:
            raise ValueError(f"node_index must be a non-negative integer, got {self.node_index!r}")
        if self.kind in ("constant", "punish_aware"):
            if self.p_d is None or not 0.0 <= self.p_d <= 1.0:
                raise ValueError(f"p_d must lie in [0, 1], got {self.p_d!r}")
        if not 0.0 <= self.p_r <= 1.0:
            raise ValueError(f"p_r must lie in [0, 1], got {self.p_r!r}")
        if self.defect_in not in ("review", "reciprocation"):
            raise ValueError(f"defect_in must be 'review' or 'reciprocation', got {self.defect_in!r}")
        if self.kind == "adaptive" and not callable(self.rule):
            raise ValueError("adaptive deviants need a callable rule")

    @classmethod
    def constant(cls, node_index: int, p_d: float) -> "DeviantSpec":
        return cls(node_index, "constant", p_d)

    @classmethod
    def punish_aware(cls, node_index: int, p_d: float, p_r: float = 1.0,
                     defect_in: str = "review") -> "DeviantSpec":
        return cls(node_index, "punish_aware", p_d, p_r, defect_in)

    @classmethod
    def adaptive(cls, node_index: int, rule, p_r: float = 1.0) -> "DeviantSpec":
        return cls(node_index, "adaptive", None, p_r, rule=rule)

    @classmethod
    def best_response(cls, node_index: int, p_r: float = 1.0) -> "DeviantSpec":
        return cls(node_index, "best_response", None, p_r)

    def to_dict(self) -> dict:
        """Plain description; an adaptive rule is recorded only by its name."""
        out = {"node": self.node_index, "kind": self.kind}
        if self.kind in ("constant", "punish_aware"):
            out["p_d"] = self.p_d
        if self.kind != "constant":
            out["p_r"] = self.p_r
        if self.kind == "punish_aware":
            out["defect_in"] = self.defect_in
        if self.kind == "adaptive":
            out["rule"] = getattr(self.rule, "__qualname__", repr(self.rule))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DeviantSpec":
        if data.get("kind") == "adaptive":
            raise ValueError("adaptive deviants need a callable rule and cannot be loaded from a document")
        return cls(int(data["node"]), data.get("kind", "constant"), data.get("p_d"),
                   data.get("p_r", 1.0), data.get("defect_in", "review"))


@dataclass(frozen=True)
class SimConfig:
    protocol: Protocol
    deviants: tuple = ()
    epochs: int = 100_000
    master_seed: int = 0
    batch_size: int = 10_000
    n_jobs: int = 1
    network: Optional[NetworkConfig] = None

    def __post_init__(self):
        mode = _mode_of(self.protocol)
        net = self.protocol.network
        if self.network is None:
            object.__setattr__(self, "network", net)
        elif self.network != net:
            raise ValueError("network does not match the protocol's N and p_c")
        object.__setattr__(self, "deviants", tuple(self.deviants))
        seen = set()
        for d in self.deviants:
            if d.node_index >= net.n_nodes or d.node_index in seen:
                raise ValueError(f"deviant node indices must be distinct and < N, got {d.node_index}")
            seen.add(d.node_index)
            if mode == "private" and d.kind in ("adaptive", "best_response"):
                raise ValueError(f"{d.kind} deviants are only defined for public signals")
            if mode == "public" and d.kind == "punish_aware" and d.defect_in != "review":
                raise ValueError("public protocols have no cooperation phase to defect in")
        if len(self.deviants) >= net.n_nodes:
            raise ValueError("at least one node must follow the protocol")
        for name in ("epochs", "batch_size", "n_jobs"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @property
    def mode(self) -> str:
        return _mode_of(self.protocol)

    def to_dict(self) -> dict:
        return {
            "signal": self.mode,
            "protocol": self.protocol.to_dict(),
            "deviants": [d.to_dict() for d in self.deviants],
            "epochs": self.epochs,
            "master_seed": int(self.master_seed),
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        p = data["protocol"]
        cls_ = PrivateReviewProtocol if data["signal"] == "private" else PublicReviewProtocol
        protocol = cls_(p["B"], p["L"], p["M"], p.get("N", 5), p.get("p_c"))
        return cls(protocol,
                   tuple(DeviantSpec.from_dict(d) for d in data.get("deviants", ())),
                   int(data.get("epochs", 100_000)), int(data.get("master_seed", 0)),
                   int(data.get("batch_size", 10_000)), int(data.get("n_jobs", 1)))


def replication_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))))


class _Tally:
    """Integer sufficient statistics of a set of epochs."""

    def __init__(self, n_nodes: int, review_len: int, n_hist: int):
        self.epochs = 0
        self.punished = 0
        self.len_sum = 0
        self.len_sq = 0
        self.reward = np.zeros(n_nodes, dtype=np.int64)
        self.reward_sq = np.zeros(n_nodes, dtype=np.int64)
        self.reward_len = np.zeros(n_nodes, dtype=np.int64)
        self.compliant = np.zeros(3, dtype=np.int64)  # sum, sum sq, sum x len
        self.node_fail = np.zeros(n_nodes, dtype=np.int64)
        self.hist = np.zeros((n_hist, review_len + 1), dtype=np.int64)

    def add_epochs(self, rewards, lengths, punished, node_fail, counts, compliant_mask):
        rewards = np.asarray(rewards, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        self.epochs += len(lengths)
        self.punished += int(np.count_nonzero(punished))
        self.len_sum += int(lengths.sum())
        self.len_sq += int((lengths * lengths).sum())
        self.reward += rewards.sum(axis=0)
        self.reward_sq += (rewards * rewards).sum(axis=0)
        self.reward_len += (rewards * lengths[:, None]).sum(axis=0)
        comp = rewards[:, compliant_mask].sum(axis=1)
        self.compliant += np.array([comp.sum(), (comp * comp).sum(), (comp * lengths).sum()])
        self.node_fail += np.asarray(node_fail, dtype=np.int64).sum(axis=0)
        counts = np.asarray(counts, dtype=np.int64)
        for h in range(self.hist.shape[0]):
            self.hist[h] += np.bincount(counts[:, h], minlength=self.hist.shape[1])

    def merge(self, other: "_Tally") -> "_Tally":
        for name in ("epochs", "punished", "len_sum", "len_sq"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        for name in ("reward", "reward_sq", "reward_len", "compliant", "node_fail", "hist"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self


def _ratio_stats(x_sum, x_sq, x_len, n, len_sum, len_sq):
    """Ratio estimator sum(x)/sum(len) and its delta-method standard error."""
    x_sum, x_sq, x_len = float(x_sum), float(x_sq), float(x_len)
    v = x_sum / len_sum
    if n < 2:
        return v, math.nan
    resid_sq = x_sq - 2.0 * v * x_len + v * v * len_sq
    resid_sq = max(resid_sq, 0.0)
    mean_len = len_sum / n
    return v, math.sqrt(resid_sq / (n * (n - 1))) / mean_len


@dataclass(frozen=True)
class _DeviantTable:
    """Per-phase transmission probabilities of every node, as arrays."""

    review: np.ndarray       # (N,) probabilities for history-free review behaviour
    cooperation: np.ndarray  # (N,) private cooperation phase
    punishment: np.ndarray   # (N,) while the node itself is punishing / punished
    punish_aware: np.ndarray  # (N,) bool: deviant tracks its own phase
    adaptive: dict           # node -> (L, L+1) review table indexed by [slot, idle count]


def _deviant_table(cfg: SimConfig, best: Optional[BestResponse]) -> _DeviantTable:
    N = cfg.network.n_nodes
    p_c = cfg.network.p_c
    L = cfg.protocol.review_len
    review = np.full(N, p_c)
    coop = np.full(N, p_c)
    punish = np.ones(N)
    aware = np.zeros(N, dtype=bool)
    adaptive = {}
    for d in cfg.deviants:
        i = d.node_index
        if d.kind == "constant":
            review[i] = coop[i] = punish[i] = d.p_d
        elif d.kind == "punish_aware":
            aware[i] = True
            punish[i] = d.p_r
            if d.defect_in == "review":
                review[i] = d.p_d
            else:
                coop[i] = d.p_d
        else:
            punish[i] = d.p_r
            table = np.zeros((L, L + 1))
            for j in range(L):
                for c in range(j + 1):
                    table[j, c] = d.rule(j, c) if d.kind == "adaptive" else best.action(j, c)
            if not np.all((table >= 0) & (table <= 1)):
                raise ValueError("adaptive rule returned a probability outside [0, 1]")
            adaptive[i] = table
    return _DeviantTable(review, coop, punish, aware, adaptive)


def _simulate_private(cfg, table, rng, n_epochs, tally):
    proto = cfg.protocol
    N, L, M, t = proto.n_nodes, proto.review_len, proto.recip_len, proto.threshold
    acks = np.zeros((n_epochs, N), dtype=np.int64)
    rewards = np.zeros((n_epochs, N), dtype=np.int64)
    review_p = np.broadcast_to(table.review, (n_epochs, N))
    for _ in range(L):
        tx = rng.random((n_epochs, N)) < review_p
        win = tx & (tx.sum(axis=1) == 1)[:, None]
        acks += win
        rewards += win
    failed = acks <= t
    deviant = np.zeros(N, dtype=bool)
    for d in cfg.deviants:
        deviant[d.node_index] = True
    compliant_mask = ~deviant
    # protocol followers and punish-aware deviants act on their own verdict
    own_phase = compliant_mask | table.punish_aware
    recip_p = np.where(failed, table.punishment, table.cooperation)
    recip_p = np.where(own_phase, recip_p, table.review)
    for _ in range(M):
        tx = rng.random((n_epochs, N)) < recip_p
        rewards += tx & (tx.sum(axis=1) == 1)[:, None]
    punished = failed[:, compliant_mask].any(axis=1)
    lengths = np.full(n_epochs, L + M, dtype=np.int64)
    tally.add_epochs(rewards, lengths, punished, failed, acks, compliant_mask)


def _simulate_public(cfg, table, rng, n_epochs, tally):
    proto = cfg.protocol
    N, L, M, t = proto.n_nodes, proto.review_len, proto.punish_len, proto.threshold
    idle = np.zeros(n_epochs, dtype=np.int64)
    rewards = np.zeros((n_epochs, N), dtype=np.int64)
    p = np.tile(table.review, (n_epochs, 1))
    for j in range(L):
        for i, tab in table.adaptive.items():
            p[:, i] = tab[j, idle]
        tx = rng.random((n_epochs, N)) < p
        n_tx = tx.sum(axis=1)
        rewards += tx & (n_tx == 1)[:, None]
        idle += n_tx == 0
    punished = idle <= t
    punish_p = np.broadcast_to(table.punishment, (n_epochs, N))
    for _ in range(M):
        tx = rng.random((n_epochs, N)) < punish_p
        rewards += tx & ((tx.sum(axis=1) == 1) & punished)[:, None]
    compliant_mask = np.ones(N, dtype=bool)
    for d in cfg.deviants:
        compliant_mask[d.node_index] = False
    lengths = L + M * punished.astype(np.int64)
    node_fail = np.repeat(punished[:, None], N, axis=1)
    tally.add_epochs(rewards, lengths, punished, node_fail, idle[:, None], compliant_mask)


class _ReferenceDeviant:
    """Scalar counterpart of one deviant, driven by its own automaton."""

    def __init__(self, spec: DeviantSpec, protocol, best: Optional[BestResponse]):
        self.spec = spec
        self.automaton = Automaton(protocol)
        self.best = best
        self.idle_seen = 0
        self.p_c = protocol.cooperation_prob

    def reset(self):
        self.automaton.reset()
        self.idle_seen = 0

    def transmit_prob(self) -> float:
        s, a = self.spec, self.automaton
        if s.kind == "constant":
            return s.p_d
        if a.phase == "punishment":
            return s.p_r
        if s.kind == "punish_aware":
            defecting = (a.phase == "review") == (s.defect_in == "review")
            return s.p_d if defecting else self.p_c
        if s.kind == "adaptive":
            return s.rule(a.slot, self.idle_seen)
        return float(self.best.action(a.slot, self.idle_seen))

    def observe(self, signal):
        a = self.automaton
        if a.phase == "review" and signal == IDLE:
            self.idle_seen += 1
        a.observe(signal)
        if a.phase == "review" and a.slot == 0:
            self.idle_seen = 0


def _simulate_reference(cfg, best, rng, n_epochs, tally, on_slot=None):
    """Epoch-by-epoch simulation with one Automaton per node.

    Consumes the random stream exactly like the vectorized engine with a
    batch of one epoch, so the two agree bit-for-bit at ``batch_size=1``.
    """
    proto, mode = cfg.protocol, cfg.mode
    N, L = proto.n_nodes, proto.review_len
    M = proto.recip_len if mode == "private" else proto.punish_len
    deviants = {d.node_index: _ReferenceDeviant(d, proto, best) for d in cfg.deviants}
    agents = [deviants.get(i) or Automaton(proto) for i in range(N)]
    compliant_mask = np.array([i not in deviants for i in range(N)])
    for _ in range(n_epochs):
        for a in agents:
            a.reset()
        rewards = np.zeros(N, dtype=np.int64)
        counts = np.zeros(N, dtype=np.int64)
        idle = 0
        failed = np.zeros(N, dtype=bool)
        punished = False
        length = 0
        for slot in range(L + M):
            u = rng.random((1, N))[0]
            if slot >= L and mode == "public" and not punished:
                continue  # stream position kept, slot not part of this epoch
            probs = [a.transmit_prob() for a in agents]
            sent = [bool(u[i] < probs[i]) for i in range(N)]
            length += 1
            if mode == "private":
                signals = step_signals(sent, "private")
                for i, a in enumerate(agents):
                    if signals[i] == ACK:
                        rewards[i] += 1
                        if slot < L:
                            counts[i] += 1
                    a.observe(signals[i])
            else:
                signal = step_signals(sent, "public")
                if signal == SUCCESS:
                    rewards[sent.index(True)] += 1
                if signal == IDLE and slot < L:
                    idle += 1
                for a in agents:
                    a.observe(signal)
            if slot == L - 1:
                if mode == "private":
                    failed = counts <= proto.threshold
                    punished = bool(failed[compliant_mask].any())
                else:
                    punished = idle <= proto.threshold
                    failed[:] = punished
            if on_slot is not None:
                on_slot(slot, sent, agents)
        hist_counts = counts if mode == "private" else np.array([idle])
        tally.add_epochs(rewards[None, :], [length], [punished], failed[None, :],
                         hist_counts[None, :], compliant_mask)


@dataclass(frozen=True)
class SimReport:
    mode: str
    config: dict
    epochs: int
    slots: int
    payoff_mean: tuple
    payoff_se: tuple
    compliant_payoff: float
    compliant_payoff_se: float
    punishment_rate: float
    false_punishment_rate: Optional[float]
    miss_detection_rate: Optional[float]
    node_fail_rate: tuple
    review_histograms: tuple
    count_kind: str
    mean_epoch_len: float
    deviant_nodes: tuple

    def to_dict(self) -> dict:
        return {
            "signal": self.mode,
            "config": self.config,
            "epochs": self.epochs,
            "slots": self.slots,
            "payoff_mean": list(self.payoff_mean),
            "payoff_se": list(self.payoff_se),
            "compliant_payoff": self.compliant_payoff,
            "compliant_payoff_se": self.compliant_payoff_se,
            "punishment_rate": self.punishment_rate,
            "false_punishment_rate": self.false_punishment_rate,
            "miss_detection_rate": self.miss_detection_rate,
            "node_fail_rate": list(self.node_fail_rate),
            "count_kind": self.count_kind,
            "review_histograms": [list(h) for h in self.review_histograms],
            "mean_epoch_len": self.mean_epoch_len,
            "deviant_nodes": list(self.deviant_nodes),
        }


def _report(cfg: SimConfig, tally: _Tally) -> SimReport:
    n = tally.epochs
    means, ses = [], []
    for i in range(cfg.network.n_nodes):
        v, se = _ratio_stats(tally.reward[i], tally.reward_sq[i], tally.reward_len[i],
                             n, tally.len_sum, tally.len_sq)
        means.append(v)
        ses.append(se)
    n_comp = cfg.network.n_nodes - len(cfg.deviants)
    cv, cse = _ratio_stats(*tally.compliant, n, tally.len_sum, tally.len_sq)
    rate = tally.punished / n
    return SimReport(
        mode=cfg.mode,
        config=cfg.to_dict(),
        epochs=n,
        slots=tally.len_sum,
        payoff_mean=tuple(means),
        payoff_se=tuple(ses),
        compliant_payoff=cv / n_comp,
        compliant_payoff_se=cse / n_comp,
        punishment_rate=rate,
        false_punishment_rate=rate if not cfg.deviants else None,
        miss_detection_rate=1.0 - rate if len(cfg.deviants) == 1 else None,
        node_fail_rate=tuple(int(x) / n for x in tally.node_fail),
        review_histograms=tuple(tuple(int(x) for x in h) for h in tally.hist),
        count_kind="ack" if cfg.mode == "private" else "idle",
        mean_epoch_len=tally.len_sum / n,
        deviant_nodes=tuple(d.node_index for d in cfg.deviants),
    )


def run(cfg: SimConfig, engine: str = "vector", on_slot=None) -> SimReport:
    """Simulate ``cfg.epochs`` epochs and summarize them.

    ``engine="reference"`` runs the scalar per-node automata (slow, used for
    cross-checks); ``on_slot(slot, actions, agents)`` is called after every
    slot of that engine.
    """
    if engine not in ("vector", "reference"):
        raise ValueError(f"unknown engine {engine!r}")
    best = None
    if any(d.kind == "best_response" for d in cfg.deviants):
        best = best_response_public(cfg.protocol)
    N, L = cfg.network.n_nodes, cfg.protocol.review_len
    n_hist = N if cfg.mode == "private" else 1
    table = _deviant_table(cfg, best) if engine == "vector" else None
    n_batches = math.ceil(cfg.epochs / cfg.batch_size)

    def one(index: int) -> _Tally:
        size = min(cfg.batch_size, cfg.epochs - index * cfg.batch_size)
        rng = replication_rng(cfg.master_seed, index)
        tally = _Tally(N, L, n_hist)
        if engine == "reference":
            _simulate_reference(cfg, best, rng, size, tally, on_slot)
        elif cfg.mode == "private":
            _simulate_private(cfg, table, rng, size, tally)
        else:
            _simulate_public(cfg, table, rng, size, tally)
        return tally

    if cfg.n_jobs > 1 and engine == "vector":
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            parts = list(pool.map(one, range(n_batches)))
    else:
        parts = [one(i) for i in range(n_batches)]
    total = _Tally(N, L, n_hist)
    for part in parts:
        total.merge(part)
    return _report(cfg, total)


@dataclass(frozen=True)
class Comparison:
    records: tuple

    @property
    def passed(self) -> bool:
        """True when no gated quantity is flagged."""
        return not any(r["gated"] and r["flagged"] for r in self.records)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "records": [dict(r) for r in self.records]}


def _record(name, empirical, analytic, se, gated, note=None):
    diff = empirical - analytic
    if se and math.isfinite(se) and se > 0:
        z = diff / se
    else:
        z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    rec = {"quantity": name, "empirical": empirical, "analytic": analytic, "stderr": se,
           "z": z, "flagged": bool(abs(z) > 3), "gated": gated}
    if note:
        rec["note"] = note
    return rec


def _rate_se(p_analytic, p_empirical, n):
    p = p_analytic if 0.0 < p_analytic < 1.0 else p_empirical
    return math.sqrt(p * (1.0 - p) / n)


def compare_to_analytic(report: SimReport, analysis: Union[PrivateAnalysis, PublicAnalysis]) -> Comparison:
    """Line simulated quantities up against their closed forms.

    Each record has the empirical and analytic value, a standard error, a
    z-score and ``flagged = |z| > 3``. Public-signal quantities are exact
    binomial consequences and are gated. Private joint quantities rest on
    treating the nodes' ACK counts as independent, which they are not, so
    they are reported but not gated; the per-node failure rate is exact and
    gated.
    """
    mode = "private" if isinstance(analysis, PrivateAnalysis) else "public"
    if report.mode != mode or report.config["protocol"] != analysis.protocol.to_dict():
        raise ValueError("report and analysis describe different protocols")
    deviants = report.config["deviants"]
    if len(deviants) > 1:
        raise ValueError("closed forms cover at most one deviant")
    if deviants:
        d = deviants[0]
        review_p = d.get("p_d")
        if d["kind"] not in ("constant", "punish_aware") or (
                d["kind"] == "punish_aware" and d.get("defect_in") != "review"):
            raise ValueError("closed forms assume a deviant that defects throughout reviews")
        if review_p != analysis.p_d:
            raise ValueError(f"deviant p_d={review_p} does not match analysis p_d={analysis.p_d}")
        if mode == "private" and d["kind"] != "constant":
            raise ValueError("private closed forms assume a constant deviant")

    n = report.epochs
    errors = analysis.errors
    records = []
    if not deviants:
        pf = errors.false_punishment
        records.append(_record("false_punishment", report.false_punishment_rate, pf,
                               _rate_se(pf, report.false_punishment_rate, n),
                               gated=mode == "public",
                               note=None if mode == "public" else "independence approximation"))
        records.append(_record("compliant_payoff", report.compliant_payoff, analysis.payoff_compliant,
                               report.compliant_payoff_se, gated=mode == "public",
                               note=None if mode == "public" else "closed form not derived from first principles"))
        if mode == "private":
            p1 = errors.per_node_fail
            for i, rate in enumerate(report.node_fail_rate):
                records.append(_record(f"node_fail[{i}]", rate, p1, _rate_se(p1, rate, n), gated=True))
    else:
        i = deviants[0]["node"]
        pm = errors.miss_detection
        records.append(_record("miss_detection", report.miss_detection_rate, pm,
                               _rate_se(pm, report.miss_detection_rate, n),
                               gated=mode == "public",
                               note=None if mode == "public" else "independence approximation"))
        records.append(_record("deviator_payoff", report.payoff_mean[i], analysis.payoff_deviator,
                               report.payoff_se[i], gated=mode == "public",
                               note=None if mode == "public" else "uses the independence-based P_m"))
    return Comparison(tuple(records))
