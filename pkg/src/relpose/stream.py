"""Causal streaming state machine.

An incoming frame is paired only against the active context (frame 1 plus
a bounded keyframe bank).  The pipeline per frame is: outlier gate, fusion
of context candidates, token-novelty admission with a force-admit staleness
cap, utility culling when over capacity.  Sustained rejection or hitting
the segment length cap triggers a segment reset, re-anchored through a
short bridge of frames carrying absolute poses from the previous segment.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .geom import Pose
from .posegraph import PoseEdge, compose_candidate, fuse_candidates


class NonMonotoneFrameId(ValueError):
    pass


class MissingContextEdges(ValueError):
    pass


class BridgeTooShort(ValueError):
    pass


class BridgeTooLong(ValueError):
    pass


class NonPositiveDepth(ValueError):
    pass


@dataclass(frozen=True)
class StreamConfig:
    tau: float = 0.98            # token-novelty admission threshold
    m_max: int = 100             # keyframe bank capacity
    delta_max: int = 20          # force-admit staleness cap (accepted frames)
    n_cal: int = 3               # gate calibration frame count
    tau_out: float = 0.15        # gate rejection factor on the baseline
    n_rej: int = 3               # consecutive rejections before reset
    l_max: int = 2000            # accepted frames per segment before scheduled reset
    k: int | None = None         # fusion top-K; None = all references
    log_weights: bool = False    # softmax over log-confidences instead of raw


@dataclass(frozen=True)
class FrameToken:
    id: int
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        n = np.linalg.norm(f)
        if abs(n - 1.0) > 1e-9:
            if n < 1e-12:
                raise ValueError("token features must be nonzero")
            f = f / n
        f = np.array(f)
        f.setflags(write=False)
        object.__setattr__(self, "features", f)


@dataclass
class BankEntry:
    frame_id: int
    token: FrameToken
    pose: Pose
    best_conf: float  # strongest mean pair confidence seen against the bank


class KeyframeBank:
    """Bounded, ordered set of keyframes; the first frame is protected."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.entries = []
        self.protected = None

    def ids(self):
        return [e.frame_id for e in self.entries]

    def add(self, entry: BankEntry, protected=False):
        self.entries.append(entry)
        if protected:
            self.protected = entry.frame_id

    def entry(self, frame_id):
        for e in self.entries:
            if e.frame_id == frame_id:
                return e
        return None

    def max_cosine(self, token: FrameToken) -> float:
        mat = np.array([e.token.features for e in self.entries])
        return float((mat @ token.features).max())

    def __len__(self):
        return len(self.entries)


def admit_check(bank: KeyframeBank, token: FrameToken, tau: float,
                frames_since_admit: int, delta_max: int) -> bool:
    """Admit when the token is novel or the bank has gone stale."""
    if frames_since_admit >= delta_max:
        return True
    return bank.max_cosine(token) < tau


def cull(bank: KeyframeBank) -> int:
    """Evict the entry with minimal utility u = d * c; returns its frame id.

    d is the distinctiveness from the closest other bank entry in token
    space, c the strongest pair confidence.  Frame 1 is never evicted;
    ties break by ascending frame id.
    """
    mat = np.array([e.token.features for e in bank.entries])
    sim = mat @ mat.T
    np.fill_diagonal(sim, -np.inf)
    d = 1.0 - sim.max(axis=1)
    best = None
    for idx, e in enumerate(bank.entries):
        if e.frame_id == bank.protected:
            continue
        u = d[idx] * e.best_conf
        key = (u, e.frame_id)
        if best is None or key < best[0]:
            best = (key, idx)
    evicted = bank.entries.pop(best[1])
    return evicted.frame_id


def gate_score(edges_into_j) -> float:
    """Mean averaged-pair confidence of a frame against its context."""
    edges = list(edges_into_j)
    if not edges:
        raise ValueError("need at least one edge")
    return float(np.mean([e.mean_conf for e in edges]))


class OutlierGate:
    """Confidence gate calibrated on the first n_cal scored frames.

    Before the baseline exists the gate never rejects; afterwards a frame
    is rejected when its score falls below tau_out * baseline.  The
    consecutive-rejection counter resets on any accepted frame.
    """

    def __init__(self, n_cal, tau_out, n_rej):
        self.n_cal = n_cal
        self.tau_out = tau_out
        self.n_rej = n_rej
        self._cal_scores = []
        self._seeded = 0
        self.baseline = None
        self.consecutive_rejections = 0

    def seed_frame(self):
        """Count a scoreless frame (the origin) toward the calibration
        prefix so calibration ends after the first n_cal stream frames."""
        if self.baseline is None:
            self._seeded += 1

    def check(self, score) -> bool:
        """Score one frame; returns True when the frame passes."""
        if self.baseline is None:
            self._cal_scores.append(score)
            if self._seeded + len(self._cal_scores) >= self.n_cal:
                self.baseline = float(np.mean(self._cal_scores))
            return True
        if score < self.tau_out * self.baseline:
            self.consecutive_rejections += 1
            return False
        self.consecutive_rejections = 0
        return True


@dataclass(frozen=True)
class StreamEvent:
    kind: str   # Accepted | AdmittedToBank | Evicted | Rejected | SegmentReset
    frame: int
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "frame": self.frame,
                           "details": self.details}, sort_keys=True)

    @staticmethod
    def from_json(line):
        d = json.loads(line)
        return StreamEvent(d["kind"], d["frame"], d.get("details", {}))


class StreamState:
    """All mutable state of one streaming run; owned by a single loop."""

    def __init__(self, config: StreamConfig):
        self.config = config
        self.bank = KeyframeBank(config.m_max)
        self.gate = OutlierGate(config.n_cal, config.tau_out, config.n_rej)
        self.trajectory = {}            # frame id -> Pose, accepted frames only
        self.frames_since_admit = 0
        self.segment_index = 0
        self.segment_scale = 1.0
        self.segment_accepted = 0
        self.reset_pending = False
        self._last_frame_id = None

    @property
    def context_ids(self):
        return self.bank.ids()


def process_frame(state: StreamState, token: FrameToken, edges, k="config"):
    """Advance the stream by one frame; returns the emitted events.

    Edges must cover exactly the active context.  Raises
    NonMonotoneFrameId / MissingContextEdges on malformed input.
    """
    cfg = state.config
    if k == "config":
        k = cfg.k
    frame_id = token.id
    if state._last_frame_id is not None and frame_id <= state._last_frame_id:
        raise NonMonotoneFrameId(
            f"frame {frame_id} after frame {state._last_frame_id}")
    state._last_frame_id = frame_id
    events = []

    if not state.bank.entries:
        # first frame of the stream (or segment with empty bank): origin
        pose = Pose.identity()
        state.trajectory[frame_id] = pose
        state.bank.add(BankEntry(frame_id, token, pose, 0.0), protected=True)
        state.gate.seed_frame()
        state.frames_since_admit = 0
        state.segment_accepted = 1
        events.append(StreamEvent("Accepted", frame_id))
        events.append(StreamEvent("AdmittedToBank", frame_id))
        return events

    edges = sorted(edges, key=lambda e: e.src)
    context = state.context_ids
    if [e.src for e in edges] != sorted(context) or any(e.dst != frame_id for e in edges):
        raise MissingContextEdges(
            f"edges must cover exactly the active context {sorted(context)}")

    score = gate_score(edges)
    if not state.gate.check(score):
        events.append(StreamEvent("Rejected", frame_id,
                                  {"score": score,
                                   "threshold": state.gate.tau_out * state.gate.baseline}))
        if state.gate.consecutive_rejections >= cfg.n_rej and not state.reset_pending:
            state.reset_pending = True
            events.append(StreamEvent("SegmentReset", frame_id,
                                      {"reason": "consecutive_rejections"}))
        return events

    candidates = [compose_candidate(state.trajectory[e.src], e) for e in edges]
    pose = fuse_candidates(candidates, k=k, log_weights=cfg.log_weights)
    state.trajectory[frame_id] = pose
    events.append(StreamEvent("Accepted", frame_id, {"score": score}))

    # lazily refresh stored pair confidences from this frame's edges
    for e in edges:
        entry = state.bank.entry(e.src)
        if entry is not None and e.mean_conf > entry.best_conf:
            entry.best_conf = e.mean_conf

    if admit_check(state.bank, token, cfg.tau, state.frames_since_admit, cfg.delta_max):
        best_conf = max(e.mean_conf for e in edges)
        state.bank.add(BankEntry(frame_id, token, pose, best_conf))
        state.frames_since_admit = 0
        events.append(StreamEvent("AdmittedToBank", frame_id))
        if len(state.bank) > cfg.m_max:
            evicted = cull(state.bank)
            events.append(StreamEvent("Evicted", frame_id, {"evicted": evicted}))
    else:
        state.frames_since_admit += 1

    state.segment_accepted += 1
    if state.segment_accepted >= cfg.l_max and not state.reset_pending:
        state.reset_pending = True
        events.append(StreamEvent("SegmentReset", frame_id,
                                  {"reason": "segment_length_cap"}))
    return events


def segment_reset(state: StreamState, bridge):
    """Clear bank and gate, re-seed from bridge frames, bump the segment.

    Bridge items are (frame_id, pose, token) triples whose poses come from
    the previous segment; new frames localize by composing against them.
    """
    bridge = list(bridge)
    if len(bridge) < 3:
        raise BridgeTooShort(f"bridge has {len(bridge)} frames, need >= 3")
    if len(bridge) > 10:
        raise BridgeTooLong(f"bridge has {len(bridge)} frames, need <= 10")
    cfg = state.config
    state.bank = KeyframeBank(cfg.m_max)
    state.gate = OutlierGate(cfg.n_cal, cfg.tau_out, cfg.n_rej)
    for i, (frame_id, pose, token) in enumerate(bridge):
        state.trajectory[frame_id] = pose
        state.bank.add(BankEntry(frame_id, token, pose, 0.0), protected=(i == 0))
    state.frames_since_admit = 0
    state.segment_index += 1
    state.segment_accepted = len(bridge)
    state.reset_pending = False
    return state


def anchor_scale(predicted_depth_summary, metric_depth_summary) -> float:
    """Per-segment scale from two depth medians: metric / predicted."""
    if predicted_depth_summary <= 0 or metric_depth_summary <= 0:
        raise NonPositiveDepth("depth summaries must be positive")
    return metric_depth_summary / predicted_depth_summary


def scale_trajectory(trajectory, scale):
    """Apply one scalar uniformly to all translations."""
    return {fid: replace(p, translation=p.translation * scale)
            for fid, p in trajectory.items()}


def write_event_log(events, path):
    with open(path, "w") as f:
        for ev in events:
            f.write(ev.to_json() + "\n")


def read_event_log(path):
    events = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(StreamEvent.from_json(line))
    return events
