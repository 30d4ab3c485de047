"""Confidence-weighted pose-graph refinement.

Pose-only optimization over relative-pose edges: each edge contributes
c_rot * Huber(rotation residual) + c_trans * Huber(translation residual),
with the first pose held fixed.  Rotations are locally parameterized by
axis-angle increments composed onto the initialization; the objective and
its analytic gradient are evaluated vectorized over all edges, and the
solve runs L-BFGS with a sufficient-decrease line search.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .geom import (Pose, UnitQuaternion, pose_relative, quat_geodesic_deg,
                   quat_multiply)
from .posegraph import PoseEdge, parse_edge, format_edge


class NonFiniteObjective(ValueError):
    pass


@dataclass(frozen=True)
class RefinementProblem:
    poses: dict                    # frame id -> Pose, the initialization
    edges: tuple
    delta_rot: float = 0.05        # Huber knee for rotation residuals, rad
    delta_trans: float = 0.1       # Huber knee for translation residuals
    fixed: int | None = None       # gauge node; defaults to the lowest id
    rot_residual: str = "geodesic"  # geodesic | chordal

    def __post_init__(self):
        if self.delta_rot <= 0 or self.delta_trans <= 0:
            raise ValueError("Huber deltas must be positive")
        object.__setattr__(self, "edges", tuple(self.edges))
        for e in self.edges:
            if e.src not in self.poses or e.dst not in self.poses:
                raise ValueError(f"edge ({e.src},{e.dst}) references an unknown node")
        if self.fixed is None:
            object.__setattr__(self, "fixed", min(self.poses))
        elif self.fixed not in self.poses:
            raise ValueError("fixed node has no pose")
        if self.rot_residual not in ("geodesic", "chordal"):
            raise ValueError(f"unknown rot_residual {self.rot_residual!r}")


@dataclass(frozen=True)
class RefinementResult:
    poses: dict
    initial_objective: float
    final_objective: float
    iterations: int
    converged: bool


def huber(r, delta):
    """Huber loss: r^2/2 inside the knee, linear with matched slope outside."""
    r = np.asarray(r, dtype=float)
    out = np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))
    return out if out.ndim else float(out)


def edge_residuals(pose_i: Pose, pose_j: Pose, edge: PoseEdge):
    """(rotation residual in radians, translation residual) of one edge
    against the relative pose induced by the two node poses."""
    rel = pose_relative(pose_i, pose_j)
    e_r = math.radians(quat_geodesic_deg(rel.rotation, edge.rel_rotation))
    e_t = float(np.linalg.norm(rel.translation - edge.rel_translation))
    return e_r, e_t


def _skew(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _exp_so3(w):
    """Batch Rodrigues: (N,3) rotation vectors to (N,3,3) matrices."""
    theta = np.linalg.norm(w, axis=-1)
    K = _skew(w)
    K2 = K @ K
    t2 = np.maximum(theta * theta, 1e-300)
    a = np.where(theta < 1e-8, 1.0 - t2 / 6.0, np.sin(theta) / np.sqrt(t2))
    b = np.where(theta < 1e-8, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / t2)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2


def _right_jacobian(w):
    """Right Jacobian of SO(3): Exp(w + d) ~ Exp(w) Exp(Jr(w) d)."""
    theta = np.linalg.norm(w, axis=-1)
    K = _skew(w)
    K2 = K @ K
    t2 = np.maximum(theta * theta, 1e-300)
    t3 = np.maximum(theta * theta * theta, 1e-300)
    a = np.where(theta < 1e-6, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / t2)
    b = np.where(theta < 1e-6, 1.0 / 6.0 - t2 / 120.0, (theta - np.sin(theta)) / t3)
    return np.eye(3) - a[..., None, None] * K + b[..., None, None] * K2


def _vee_trace(M):
    """d tr(M Exp(eps)) / d eps at eps = 0."""
    return np.stack([M[..., 1, 2] - M[..., 2, 1],
                     M[..., 2, 0] - M[..., 0, 2],
                     M[..., 0, 1] - M[..., 1, 0]], axis=-1)


class _Workspace:
    """Flattened arrays of one refinement problem."""

    def __init__(self, problem: RefinementProblem):
        self.problem = problem
        self.ids = sorted(problem.poses)
        index = {fid: k for k, fid in enumerate(self.ids)}
        self.fixed_idx = index[problem.fixed]
        self.free = np.array([k for k in range(len(self.ids)) if k != self.fixed_idx])
        self.R0 = np.array([problem.poses[i].rotation.to_matrix() for i in self.ids])
        self.t0 = np.array([problem.poses[i].translation for i in self.ids])
        self.ei = np.array([index[e.src] for e in problem.edges])
        self.ej = np.array([index[e.dst] for e in problem.edges])
        self.Rhat = np.array([e.rel_rotation.to_matrix() for e in problem.edges])
        self.that = np.array([e.rel_translation for e in problem.edges])
        self.cR = np.array([e.conf_rot for e in problem.edges])
        self.cT = np.array([e.conf_trans for e in problem.edges])

    def initial_params(self):
        return np.zeros(6 * len(self.free))

    def unpack(self, x):
        n = len(self.ids)
        w = np.zeros((n, 3))
        t = self.t0.copy()
        per = x.reshape(len(self.free), 6)
        w[self.free] = per[:, :3]
        t[self.free] = self.t0[self.free] + per[:, 3:]
        return w, t

    def objective_and_gradient(self, x):
        prob = self.problem
        w, t = self.unpack(x)
        A = _exp_so3(w)
        R = A @ self.R0
        ei, ej = self.ei, self.ej
        Ri, Rj = R[ei], R[ej]

        # translation residual r = R_i^T (t_j - t_i) - that
        d = t[ej] - t[ei]
        u = np.einsum("nji,nj->ni", Ri, d)
        r = u - self.that
        eT = np.linalg.norm(r, axis=1)
        loss_t = self.cT * huber(eT, prob.delta_trans)
        wT = np.where(eT <= prob.delta_trans, 1.0,
                      prob.delta_trans / np.maximum(eT, 1e-300))
        g_r = (self.cT * wT)[:, None] * r           # dLoss/dr per edge

        # rotation residual from E = Rhat^T R_i^T R_j
        RiT_Rj = np.einsum("nji,njk->nik", Ri, Rj)
        E = np.einsum("nji,njk->nik", self.Rhat, RiT_Rj)
        tr = np.trace(E, axis1=1, axis2=2)
        if prob.rot_residual == "geodesic":
            cos_e = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
            eR = np.arccos(cos_e)
            sin_e = np.sqrt(np.maximum(1.0 - cos_e * cos_e, 1e-300))
            # dLoss/dtr = cR * rho'(e) * (-1 / (2 sin e)); the small-angle
            # branch uses the smooth e/sin(e) factor
            small = eR <= prob.delta_rot
            ratio = np.where(eR < 1e-6, 1.0 + eR * eR / 6.0, eR / sin_e)
            g_tr = np.where(small, -0.5 * self.cR * ratio,
                            -0.5 * self.cR * prob.delta_rot / sin_e)
            loss_r = self.cR * huber(eR, prob.delta_rot)
        else:  # chordal: ||R_rel - Rhat||_F = sqrt(6 - 2 tr E)
            eR = np.sqrt(np.maximum(6.0 - 2.0 * tr, 0.0))
            safe = np.maximum(eR, 1e-12)
            g_tr = np.where(eR <= prob.delta_rot, -self.cR,
                            -self.cR * prob.delta_rot / safe)
            loss_r = self.cR * huber(eR, prob.delta_rot)

        total = float(loss_t.sum() + loss_r.sum())
        if not np.isfinite(total):
            raise NonFiniteObjective("objective evaluated to a non-finite value")

        grad_t = np.zeros_like(t)
        grad_eps = np.zeros_like(w)
        Ri_gr = np.einsum("nij,nj->ni", Ri, g_r)
        np.add.at(grad_t, ej, Ri_gr)
        np.add.at(grad_t, ei, -Ri_gr)

        # translation residual's pull on node i's rotation
        R0i = self.R0[ei]
        R0u = np.einsum("nij,nj->ni", R0i, u)
        R0g = np.einsum("nij,nj->ni", R0i, g_r)
        np.add.at(grad_eps, ei, np.cross(R0g, R0u))

        # rotation residual's pull on both endpoint rotations
        # Mj = R0_j Rhat^T R_i^T A_j
        RhatT_RiT = np.einsum("nji,nkj->nik", self.Rhat, Ri)
        Mj = self.R0[ej] @ RhatT_RiT @ A[ej]
        np.add.at(grad_eps, ej, g_tr[:, None] * _vee_trace(Mj))
        Mi = np.einsum("nji,njk->nik", A[ei], Rj) @ np.einsum("nji,nkj->nik", self.Rhat, self.R0[ei])
        np.add.at(grad_eps, ei, -g_tr[:, None] * _vee_trace(Mi))

        # chain local right-perturbation gradients through the parameters
        Jr = _right_jacobian(w[self.free])
        grad_w = np.einsum("nji,nj->ni", Jr, grad_eps[self.free])
        grad = np.concatenate([grad_w, grad_t[self.free]], axis=1).ravel()
        return total, grad

    def to_poses(self, x):
        w, t = self.unpack(x)
        out = {}
        for k, fid in enumerate(self.ids):
            if k == self.fixed_idx:
                out[fid] = self.problem.poses[fid]  # gauge node, bitwise preserved
            else:
                q = UnitQuaternion.from_rotvec(w[k])
                q0 = self.problem.poses[fid].rotation
                out[fid] = Pose(quat_multiply(q, q0), t[k])
        return out


def objective(problem: RefinementProblem) -> float:
    """Objective value at the problem's initialization."""
    ws = _Workspace(problem)
    value, _ = ws.objective_and_gradient(ws.initial_params())
    return value


def gradient(problem: RefinementProblem, x=None):
    """Analytic gradient in the local parameterization (mainly for tests)."""
    ws = _Workspace(problem)
    if x is None:
        x = ws.initial_params()
    _, g = ws.objective_and_gradient(x)
    return g


def solve(problem: RefinementProblem, max_iters=100, grad_tol=1e-8) -> RefinementResult:
    ws = _Workspace(problem)
    x0 = ws.initial_params()
    f0, _ = ws.objective_and_gradient(x0)
    if not problem.edges or len(ws.free) == 0:
        return RefinementResult(dict(problem.poses), f0, f0, 0, True)

    best = {"x": x0, "f": f0}

    def fun(x):
        f, g = ws.objective_and_gradient(x)
        if f < best["f"]:
            best["f"], best["x"] = f, x.copy()
        return f, g

    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iters, "gtol": grad_tol,
                            "ftol": 1e-15})
    # the line search may end on a trial point; keep the best accepted one
    x_final, f_final = best["x"], best["f"]
    _, g_final = ws.objective_and_gradient(x_final)
    converged = bool(np.max(np.abs(g_final)) < grad_tol or res.success)
    return RefinementResult(ws.to_poses(x_final), f0, f_final,
                            int(res.nit), converged)


# --- problem dump/load: node-pose block plus the edge text format ---

def dump_problem(problem: RefinementProblem, path):
    with open(path, "w") as f:
        f.write(f"# deltas {problem.delta_rot!r} {problem.delta_trans!r} "
                f"fixed {problem.fixed} rot {problem.rot_residual}\n")
        f.write("nodes\n")
        for fid in sorted(problem.poses):
            p = problem.poses[fid]
            q, t = p.rotation, p.translation
            vals = (q.w, q.x, q.y, q.z, t[0], t[1], t[2])
            f.write(" ".join([str(fid)] + [repr(float(v)) for v in vals])
                    + "\n")
        f.write("edges\n")
        for e in problem.edges:
            f.write(format_edge(e) + "\n")


def load_problem(path) -> RefinementProblem:
    poses = {}
    edges = []
    delta_rot, delta_trans, fixed = 0.05, 0.1, None
    rot_residual = "geodesic"
    section = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.split()
                if "deltas" in parts:
                    k = parts.index("deltas")
                    delta_rot, delta_trans = float(parts[k + 1]), float(parts[k + 2])
                if "fixed" in parts:
                    fixed = int(parts[parts.index("fixed") + 1])
                if "rot" in parts:
                    rot_residual = parts[parts.index("rot") + 1]
                continue
            if line in ("nodes", "edges"):
                section = line
                continue
            if section == "nodes":
                parts = line.split()
                fid = int(parts[0])
                qw, qx, qy, qz = (float(v) for v in parts[1:5])
                t = np.array([float(v) for v in parts[5:8]])
                poses[fid] = Pose(UnitQuaternion(qw, qx, qy, qz), t)
            elif section == "edges":
                edges.append(parse_edge(line))
    return RefinementProblem(poses, tuple(edges), delta_rot, delta_trans,
                             fixed, rot_residual)
