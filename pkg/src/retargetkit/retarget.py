"""Two-stage closed-loop IK: torso toward neck/head, then arms toward the wrists with the torso locked."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geom import DEFAULT_FILTER_ALPHA, Pose6D, matrix_to_quat, quat_to_matrix, rotvec_from_matrix, se3_filter_step
from .skeleton import KeypointFrame, RobotSpec


class NumericError(RuntimeError):
    """Linear solve failed or produced non-finite values."""


class IkStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class IkConfig:
    max_iters: int = 200
    damping: float = 1e-3
    step_scale: float = 0.5
    pos_tol: float = 1e-4
    ori_tol: float = 1e-3
    w_rot_torso: float = 10.0
    w_rot_arm: float = 1.0
    alpha: float = DEFAULT_FILTER_ALPHA
    fd_step: float = 1e-6
    # per-iteration cap on |dq|_inf, keeps DLS steps sane near singularities
    max_step: float = 0.5
    # a chain attempt that has not converged after this many iterations is
    # restarted from the next-best sampled seed
    restart_after: int = 20
    restart_samples: int = 512
    restart_seed: int = 0
    # damping increases tried before an iteration counts as stalled (0 disables)
    line_search: int = 8

    def __post_init__(self):
        if self.pos_tol <= 0 or self.ori_tol <= 0:
            raise ValueError("IK tolerances must be positive")
        if self.damping <= 0:
            raise ValueError("IK damping must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("filter alpha must lie in (0, 1]")


@dataclass
class StageResult:
    q: dict
    residuals: dict
    iterations: int
    converged: bool


@dataclass
class IkResult:
    q: dict
    residuals: dict
    iterations: list
    converged: list
    error: str | None = None

    def to_json(self) -> dict:
        d = {"q": self.q, "residuals": self.residuals, "iters": list(self.iterations), "converged": list(self.converged)}
        if self.error:
            d["error"] = self.error
        return d


def _pose_error(R_t, p_t, R, p):
    return p_t - p, rotvec_from_matrix(R_t @ R.T)


def _limited_dls_step(J, e, q, lo, hi, lam2, it):
    """DLS step that freezes joints sitting on a limit and pushing past it."""
    free = np.ones(J.shape[1], dtype=bool)
    dq = np.zeros(J.shape[1])
    for _ in range(J.shape[1]):
        Jf = J[:, free]
        A = Jf @ Jf.T + lam2 * np.eye(J.shape[0])
        try:
            step = Jf.T @ np.linalg.solve(A, e)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"singular damped normal matrix at iteration {it}") from exc
        if not np.all(np.isfinite(step)):
            raise NumericError(f"non-finite joint update at iteration {it}")
        dq[:] = 0.0
        dq[free] = step
        blocked = free & (((q <= lo) & (dq < 0)) | ((q >= hi) & (dq > 0)))
        if not blocked.any():
            break
        free &= ~blocked
        if not free.any():
            dq[:] = 0.0
            break
    return dq


def clik_stage(spec: RobotSpec, active_joints, locked_q: dict, targets: dict, weights: dict | tuple,
               config: IkConfig = IkConfig()) -> StageResult:
    """Damped least-squares iteration over ``active_joints``; every other joint stays at ``locked_q``.

    ``targets`` maps frame name -> Pose6D. ``weights`` is a (position, rotation) pair
    or a per-frame mapping of such pairs; a zero weight drops that error from both
    the update and the convergence test.
    """
    if not active_joints:
        raise ValueError("clik_stage needs at least one active joint")
    frames = list(targets)
    if isinstance(weights, dict):
        w = [weights[f] for f in frames]
    else:
        w = [tuple(weights)] * len(frames)
    active = np.array([spec.dof_index(j) for j in active_joints], dtype=np.int64)
    tidx = np.array([spec.frame_index(f) for f in frames], dtype=np.int64)
    if np.any(tidx < 0):
        raise ValueError("target frames must be below the root")
    Rt = [quat_to_matrix(targets[f].orientation) for f in frames]
    pt = [targets[f].position for f in frames]
    row_w = np.concatenate([[wp] * 3 + [wr] * 3 for wp, wr in w])
    use_p = [wp > 0 for wp, _ in w]
    use_r = [wr > 0 for _, wr in w]

    qv = spec.clamp(spec.q_vector(locked_q))
    lam2 = config.damping ** 2

    def evaluate(v):
        R, p = spec.fk_arrays(v)
        err = np.empty(6 * len(frames))
        ok = True
        for i, f in enumerate(tidx):
            ep, er = _pose_error(Rt[i], pt[i], R[f], p[f])
            err[6 * i:6 * i + 3] = ep
            err[6 * i + 3:6 * i + 6] = er
            if use_p[i] and np.linalg.norm(ep) >= config.pos_tol:
                ok = False
            if use_r[i] and np.linalg.norm(er) >= config.ori_tol:
                ok = False
        return err, ok

    e, ok = evaluate(qv)
    it = 0
    lam2_now = lam2
    while not ok and it < config.max_iters:
        J = spec.fd_jacobian(qv, active, tidx, config.fd_step) * row_w[:, None]
        ew = e * row_w
        cur = ew @ ew
        # Levenberg-Marquardt style safeguard: a step that fails to lower the
        # weighted error is recomputed with 10x the damping, which bends it
        # toward the gradient; accepted steps relax the damping again
        accepted = False
        for attempt in range(config.line_search + 1):
            dq = _limited_dls_step(J, ew, qv[active], spec.lower[active], spec.upper[active], lam2_now, it)
            dq *= config.step_scale
            peak = np.max(np.abs(dq))
            if peak > config.max_step:
                dq *= config.max_step / peak
            trial = qv.copy()
            trial[active] += dq
            trial = spec.clamp(trial)
            e_try, ok_try = evaluate(trial)
            ew_try = e_try * row_w
            if ew_try @ ew_try < cur or config.line_search == 0:
                accepted = True
                lam2_now = max(lam2, lam2_now * 0.01) if attempt == 0 else lam2_now
                break
            lam2_now *= 100.0
        it += 1
        if not accepted:
            break
        qv, e, ok = trial, e_try, ok_try
    converged = ok

    residuals = {}
    for i, f in enumerate(frames):
        residuals[f] = {"position": float(np.linalg.norm(e[6 * i:6 * i + 3])),
                        "orientation": float(np.linalg.norm(e[6 * i + 3:6 * i + 6]))}
    return StageResult(spec.q_dict(qv), residuals, it, converged)


def _frame_poses(spec: RobotSpec, q: dict, frames) -> dict:
    R, p = spec.fk_arrays(spec.q_vector(q))
    out = {}
    for f in frames:
        Rf, pf = spec.frame_pose_arrays(R, p, f)
        out[f] = Pose6D(pf, matrix_to_quat(Rf))
    return out


TORSO_KEYPOINTS = ("neck", "head")
ARM_KEYPOINTS = ("l_wrist", "r_wrist")


def _target_frames(spec: RobotSpec):
    torso = {"neck": spec.keypoint_map["neck"], "head": spec.end_effectors["head"]}
    arms = {"l_wrist": spec.end_effectors["l_wrist"], "r_wrist": spec.end_effectors["r_wrist"]}
    return torso, arms


def _score(res: StageResult, weights) -> float:
    wp, wr = weights
    return sum(wp * r["position"] + wr * r["orientation"] for r in res.residuals.values())


def _ranked_seeds(spec, active, q_base, targets, config):
    """In-limit samples of the active joints; even slots by FK match to the targets, odd slots unranked."""
    rng = np.random.default_rng(config.restart_seed)
    idx = np.array([spec.dof_index(j) for j in active])
    samples = rng.uniform(spec.lower[idx], spec.upper[idx], size=(config.restart_samples, len(idx)))
    frames = [spec.frame_index(f) for f in targets]
    goals = [(quat_to_matrix(t.orientation), t.position) for t in targets.values()]
    qv = spec.clamp(spec.q_vector(q_base))
    score = np.empty(len(samples))
    for n, row in enumerate(samples):
        qv[idx] = row
        R, p = spec.fk_arrays(qv)
        err = 0.0
        for f, (Rt, pt) in zip(frames, goals):
            ep, er = _pose_error(Rt, pt, R[f], p[f])
            err += np.linalg.norm(ep) + 0.3 * np.linalg.norm(er)
        score[n] = err
    ranked = samples[np.argsort(score, kind="stable")]
    # interleave with unranked samples: the best FK match sometimes sits in a
    # limit-trapped basin, and every nearby ranked seed then fails the same way
    out = np.empty_like(samples)
    out[0::2] = ranked[: (len(samples) + 1) // 2]
    out[1::2] = samples[: len(samples) // 2]
    return out


def _solve_chain(spec, active, q_start, targets, weights, config) -> StageResult:
    """clik_stage from ``q_start``, then from FK-ranked sampled seeds, within ``config.max_iters`` total."""
    budget = config.max_iters
    q = dict(q_start)
    best = None
    used = 0
    seeds = None
    attempt = 0
    while True:
        n = budget - used
        if used + config.restart_after < budget:
            n = config.restart_after
        res = clik_stage(spec, active, q, targets, weights, replace(config, max_iters=n))
        used += res.iterations
        if best is None or res.converged or _score(res, weights) < _score(best, weights):
            best = res
        if res.converged or used >= budget:
            break
        if seeds is None:
            seeds = _ranked_seeds(spec, active, q_start, targets, config)
        if attempt >= len(seeds):
            break
        q = dict(q_start)
        q.update({j: float(v) for j, v in zip(active, seeds[attempt])})
        attempt += 1
    return StageResult(best.q, best.residuals, used, best.converged)


def _arm_stage(spec, q_torso, targets, weights, config) -> StageResult:
    """Solve each wrist on its own chain when the arm chains are disjoint, else jointly."""
    arm = set(spec.arm_joints)
    chains = {f: [j for j in spec.chain_joints(f) if j in arm] for f in targets}
    flat = [j for c in chains.values() for j in c]
    if len(flat) != len(set(flat)) or any(not c for c in chains.values()):
        return _solve_chain(spec, spec.arm_joints, q_torso, targets, weights, config)
    q = dict(q_torso)
    residuals, iters, converged = {}, 0, True
    for f, chain in chains.items():
        r = _solve_chain(spec, chain, q_torso, {f: targets[f]}, weights, config)
        q.update({j: r.q[j] for j in chain})
        residuals.update(r.residuals)
        iters = max(iters, r.iterations)
        converged = converged and r.converged
    # arm joints outside every wrist chain keep their locked value
    return StageResult(q, residuals, iters, converged)


def solve_pose(spec: RobotSpec, generated: KeypointFrame, previous: IkResult | None = None,
               config: IkConfig = IkConfig()) -> IkResult:
    torso_frames, arm_frames = _target_frames(spec)
    raw = {f: generated[kp] for kp, f in {**torso_frames, **arm_frames}.items()}
    if previous is not None:
        prev_poses = _frame_poses(spec, previous.q, raw)
        targets = {f: se3_filter_step(prev_poses[f], raw[f], config.alpha) for f in raw}
        q0 = dict(previous.q)
    else:
        targets = raw
        q0 = spec.zero_q()

    try:
        s1 = clik_stage(spec, spec.torso_joints, q0, {f: targets[f] for f in torso_frames.values()},
                        (1.0, config.w_rot_torso), config)
    except (NumericError, ValueError) as e:
        raise IkStageError("torso", e) from e
    try:
        s2 = _arm_stage(spec, s1.q, {f: targets[f] for f in arm_frames.values()}, (1.0, config.w_rot_arm), config)
    except (NumericError, ValueError) as e:
        raise IkStageError("arm", e) from e

    residuals = {kp: s1.residuals[f] for kp, f in torso_frames.items()}
    residuals.update({kp: s2.residuals[f] for kp, f in arm_frames.items()})
    return IkResult(s2.q, residuals, [s1.iterations, s2.iterations], [s1.converged, s2.converged])


def retarget_motion(spec: RobotSpec, frames: list, config: IkConfig = IkConfig()) -> list:
    """Sequential solve; each result seeds the next frame's filter and initial guess."""
    if not frames:
        raise ValueError("retarget_motion needs at least one frame")
    results = []
    prev = None
    for t, f in enumerate(frames):
        try:
            res = solve_pose(spec, f, prev, config)
        except IkStageError as e:
            q = dict(prev.q) if prev is not None else spec.q_dict(spec.clamp(np.zeros(len(spec.dof_names))))
            res = IkResult(q, {}, [0, 0], [False, False], error=f"frame {t}: {e}")
        results.append(res)
        prev = res
    return results

