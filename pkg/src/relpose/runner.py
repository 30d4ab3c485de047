"""Experiment drivers tying the oracle to the streaming and offline
aggregation machinery."""

from . import metrics
from .geom import Pose
from .oracle import DistractorStream, make_distractor_stream
from .posegraph import CandidatePose, compose_candidate, fuse_candidates
from .refine import RefinementProblem, solve
from .stream import StreamState, process_frame, segment_reset


def _bridge_from_state(state, token_fn, length):
    """Last `length` accepted frames with their poses and tokens."""
    ids = sorted(state.trajectory)[-length:]
    if len(ids) < 3:
        return None
    return [(fid, state.trajectory[fid], token_fn(fid)) for fid in ids]


def stream_scene(scene, config, k="config", forced_reset_at=None,
                 bridge_len=5, allow_reset=True):
    """Run one causal streaming pass over a synthetic scene.

    Returns (state, events).  Resets fire when the state machine requests
    one (or unconditionally after frame forced_reset_at), re-anchored on a
    bridge of the most recent accepted frames.
    """
    state = StreamState(config)
    events = []
    for fid in scene.frame_ids:
        token = scene.emit_token(fid)
        ctx = state.context_ids
        edges = scene.emit_edges(ctx, fid) if ctx else []
        events.extend(process_frame(state, token, edges, k))
        want_reset = (state.reset_pending and allow_reset) or fid == forced_reset_at
        if want_reset:
            bridge = _bridge_from_state(state, scene.emit_token, bridge_len)
            if bridge is not None:
                segment_reset(state, bridge)
            state.reset_pending = False
    return state, events


def offline_trajectory(scene, k=None, log_weights=False, uniform=False):
    """Full-context aggregation: every frame fuses candidates from all
    earlier frames.  uniform=True replaces the confidence weights with
    equal weights (ablation baseline)."""
    ids = scene.frame_ids
    traj = {ids[0]: Pose.identity()}
    for pos, j in enumerate(ids[1:], start=1):
        refs = ids[:pos]
        edges = scene.emit_edges(refs, j)
        cands = [compose_candidate(traj[e.src], e) for e in edges]
        if uniform:
            cands = [CandidatePose(c.proposed, 1.0, 1.0, c.reference) for c in cands]
        traj[j] = fuse_candidates(cands, k=k, log_weights=log_weights)
    return traj


def all_pair_edges(scene):
    """Every directed pair (i, j), i != j."""
    edges = []
    for j in scene.frame_ids:
        sources = [i for i in scene.frame_ids if i != j]
        edges.extend(scene.emit_edges(sources, j))
    return edges


def refine_trajectory(scene, initialization, delta_rot=0.05, delta_trans=0.1,
                      max_iters=100, grad_tol=1e-8, edges=None):
    """Confidence-weighted pose-graph refinement of an aggregated
    trajectory over the all-pair edge set (or a provided edge set)."""
    if edges is None:
        edges = all_pair_edges(scene)
    edges = [e for e in edges if e.src in initialization and e.dst in initialization]
    problem = RefinementProblem(initialization, tuple(edges),
                                delta_rot, delta_trans)
    return solve(problem, max_iters=max_iters, grad_tol=grad_tol)


def robustness_run(scene, other, n_clean, n_distract, seed, config,
                   noise_mult=10.0):
    """Stream one interleaved distractor plan through the gate.

    Distractor rejections are transient outliers, not loss of track, so
    reset requests are ignored here.  Returns (report, state, events, plan).
    """
    plan = make_distractor_stream(scene, other, n_clean, n_distract, seed)
    source = DistractorStream(scene, other, plan, noise_mult=noise_mult)
    state = StreamState(config)
    events = []
    for entry in plan.entries:
        token = source.token(entry.stream_id)
        ctx = state.context_ids
        edges = source.edges(ctx, entry.stream_id) if ctx else []
        events.extend(process_frame(state, token, edges))
        state.reset_pending = False
    report = metrics.robustness_score(events, plan.entries)
    return report, state, events, plan
