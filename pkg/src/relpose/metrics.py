"""Trajectory and robustness metrics.

ATE after Sim(3) (or SE(3)) alignment, RPE over fixed frame deltas,
per-scene win rates, equal-mass confidence-vs-error binning, and the
distractor filtering scores.
"""

from dataclasses import dataclass

import numpy as np

from .geom import (Pose, pose_relative, quat_geodesic_deg, umeyama_sim3)


class TooFewPoses(ValueError):
    pass


class MismatchedIds(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class MissingScene(ValueError):
    pass


class PlanMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryReport:
    ate_rmse: float
    ate_norm: float      # percent of reference path length
    rpe_t: float
    rpe_r: float         # degrees
    rot_rmse: float      # degrees, after alignment
    frames_evaluated: int


@dataclass(frozen=True)
class RobustnessReport:
    distractor_reject_rate: float
    clean_accept_rate: float
    bfs: float


@dataclass(frozen=True)
class ConfidenceBinSummary:
    component: str
    bin_centers: np.ndarray   # mean confidence per bin
    mean_error: np.ndarray
    std_error: np.ndarray
    counts: np.ndarray


def _common_ids(estimated, reference):
    ids = sorted(set(estimated) & set(reference))
    if set(estimated) != set(reference):
        raise MismatchedIds("trajectories must cover the same frame ids")
    return ids


def path_length(trajectory) -> float:
    """Sum of consecutive translation baselines, in frame-id order."""
    ids = sorted(trajectory)
    ts = np.array([trajectory[i].translation for i in ids])
    return float(np.linalg.norm(np.diff(ts, axis=0), axis=1).sum())


def ate(estimated, reference, alignment="sim3"):
    """ATE-RMSE and ATE-norm (%) after optimal trajectory alignment."""
    ids = _common_ids(estimated, reference)
    if len(ids) < 3:
        raise TooFewPoses("need at least 3 poses")
    est = np.array([estimated[i].translation for i in ids])
    ref = np.array([reference[i].translation for i in ids])
    align = umeyama_sim3(est, ref, with_scale=(alignment == "sim3"))
    err = align.apply(est) - ref
    ate_rmse = float(np.sqrt((err ** 2).sum(axis=1).mean()))
    norm = path_length(reference)
    ate_norm = 100.0 * ate_rmse / norm if norm > 0 else 0.0
    return ate_rmse, ate_norm


def rot_rmse_deg(estimated, reference) -> float:
    """RMSE of per-frame rotation error (degrees) after removing the
    best-fit global rotation offset between the two trajectories."""
    ids = _common_ids(estimated, reference)
    # gauge-align rotations through frame pairs relative to the first frame
    first = ids[0]
    errs = []
    for i in ids:
        rel_est = pose_relative(estimated[first], estimated[i])
        rel_ref = pose_relative(reference[first], reference[i])
        errs.append(quat_geodesic_deg(rel_est.rotation, rel_ref.rotation))
    return float(np.sqrt(np.mean(np.square(errs))))


def rpe(estimated, reference, delta=1):
    """RPE over frame pairs (i, i+delta): translation RMSE and rotation
    geodesic RMSE in degrees.  delta counts positions in id order."""
    if delta < 1:
        raise ValueError("delta must be >= 1")
    ids = _common_ids(estimated, reference)
    if len(ids) <= delta:
        raise TooFewPoses("too few poses for the requested delta")
    t_err, r_err = [], []
    for a, b in zip(ids, ids[delta:]):
        rel_est = pose_relative(estimated[a], estimated[b])
        rel_ref = pose_relative(reference[a], reference[b])
        t_err.append(np.linalg.norm(rel_est.translation - rel_ref.translation))
        r_err.append(quat_geodesic_deg(rel_est.rotation, rel_ref.rotation))
    rpe_t = float(np.sqrt(np.mean(np.square(t_err))))
    rpe_r = float(np.sqrt(np.mean(np.square(r_err))))
    return rpe_t, rpe_r


def trajectory_report(estimated, reference, alignment="sim3", rpe_delta=1):
    ate_rmse, ate_norm = ate(estimated, reference, alignment)
    rpe_t, rpe_r = rpe(estimated, reference, rpe_delta)
    return TrajectoryReport(ate_rmse, ate_norm, rpe_t, rpe_r,
                            rot_rmse_deg(estimated, reference),
                            len(set(estimated) & set(reference)))


def win_rate(per_scene_metric):
    """Fraction of scenes each method wins (strict minimum; ties split).

    per_scene_metric maps method -> scene -> value; every method must
    cover every scene.
    """
    methods = sorted(per_scene_metric)
    if not methods:
        return {}
    scenes = sorted(per_scene_metric[methods[0]])
    for m in methods:
        if sorted(per_scene_metric[m]) != scenes:
            raise MissingScene(f"method {m} does not cover every scene")
    wins = {m: 0.0 for m in methods}
    for s in scenes:
        vals = {m: per_scene_metric[m][s] for m in methods}
        best = min(vals.values())
        winners = [m for m in methods if vals[m] == best]
        for m in winners:
            wins[m] += 1.0 / len(winners)
    return {m: wins[m] / len(scenes) for m in methods}


def confidence_bins(samples, n_bins=5, component="") -> ConfidenceBinSummary:
    """Equal-mass confidence quantile bins with per-bin error statistics."""
    samples = list(samples)
    if len(samples) < n_bins:
        raise TooFewSamples(f"need at least {n_bins} samples")
    conf = np.array([s[0] for s in samples])
    err = np.array([s[1] for s in samples])
    order = np.argsort(conf, kind="stable")
    chunks = np.array_split(order, n_bins)
    centers = np.array([conf[c].mean() for c in chunks])
    means = np.array([err[c].mean() for c in chunks])
    stds = np.array([err[c].std() for c in chunks])
    counts = np.array([len(c) for c in chunks])
    return ConfidenceBinSummary(component, centers, means, stds, counts)


def robustness_score(events, plan) -> RobustnessReport:
    """Filtering quality of a streamed distractor plan.

    plan entries expose .stream_id and .kind ("clean"/"distractor");
    events are the stream's StreamEvent log.  BFS = (SR + clean accept)/2.
    SR over zero distractors is 1 by convention.
    """
    decided = {}
    for ev in events:
        if ev.kind == "Accepted":
            decided[ev.frame] = True
        elif ev.kind == "Rejected":
            decided[ev.frame] = False
    n_clean = n_distract = clean_ok = distract_ok = 0
    for entry in plan:
        if entry.stream_id not in decided:
            raise PlanMismatch(f"no accept/reject decision for frame {entry.stream_id}")
        accepted = decided[entry.stream_id]
        if entry.kind == "clean":
            n_clean += 1
            clean_ok += accepted
        else:
            n_distract += 1
            distract_ok += not accepted
    sr = distract_ok / n_distract if n_distract else 1.0
    ca = clean_ok / n_clean if n_clean else 1.0
    return RobustnessReport(sr, ca, 0.5 * sr + 0.5 * ca)
