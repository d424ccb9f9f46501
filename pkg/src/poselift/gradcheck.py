"""Central finite-difference verification of every analytic gradient.

Each check perturbs inputs or parameters by h = 1e-5 in float64 and
compares (f(x+h) - f(x-h)) / 2h against the hand-written backward pass.
Relative error uses a small absolute floor so that true-zero gradients
are not failed on finite-difference round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .losses import RobustLossConfig, gm_grad, gm_loss, l1_pose_loss, total_loss
from .pipeline import StandardizerStats, joint_depth_backward, predicted_joint_depths
from .skeleton import default_skeleton

H = 1e-5
PRIMITIVE_TOL = 1e-6
END_TO_END_TOL = 1e-5
_FLOOR = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), _FLOOR)


def _check_array(name: str, analytic: np.ndarray, f, x: np.ndarray, tol: float, max_entries: int = 0, rng=None) -> CheckResult:
    """Compare analytic d f/d x against central differences, entrywise."""
    flat = x.ravel()
    grad = np.asarray(analytic, dtype=np.float64).ravel()
    if grad.shape != flat.shape:
        raise AssertionError(f"{name}: gradient shape {grad.shape} vs input {flat.shape}")
    if max_entries and flat.size > max_entries:
        idxs = rng.choice(flat.size, size=max_entries, replace=False)
    else:
        idxs = np.arange(flat.size)
    worst = 0.0
    for i in idxs:
        old = flat[i]
        flat[i] = old + H
        up = f()
        flat[i] = old - H
        down = f()
        flat[i] = old
        numeric = (up - down) / (2.0 * H)
        worst = max(worst, _rel_err(grad[i], numeric))
    return CheckResult(name=name, max_rel_err=worst, tolerance=tol)


def check_linear(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 5))
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=4)
    c = rng.normal(size=(3, 4))

    def loss() -> float:
        return float((nn._linear_forward(x, w, b) * c).sum())

    dx, dw, db = nn._linear_backward(c, x, w)
    results = [
        _check_array("linear/dx", dx, loss, x, PRIMITIVE_TOL),
        _check_array("linear/dw", dw, loss, w, PRIMITIVE_TOL),
        _check_array("linear/db", db, loss, b, PRIMITIVE_TOL),
    ]
    return _merge("linear", results)


def check_layernorm(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 9)) * 2.0
    g = rng.normal(size=9)
    b = rng.normal(size=9)
    c = rng.normal(size=(4, 9))

    def loss() -> float:
        y, _ = nn._layernorm_forward(x, g, b)
        return float((y * c).sum())

    _, cache = nn._layernorm_forward(x, g, b)
    dx, dg, db = nn._layernorm_backward(c, cache, g)
    results = [
        _check_array("layernorm/dx", dx, loss, x, PRIMITIVE_TOL),
        _check_array("layernorm/dg", dg, loss, g, PRIMITIVE_TOL),
        _check_array("layernorm/db", db, loss, b, PRIMITIVE_TOL),
    ]
    return _merge("layernorm", results)


def check_relu(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 7))
    x = np.where(np.abs(x) < 0.05, 0.1, x)  # keep clear of the kink
    c = rng.normal(size=(5, 7))

    def loss() -> float:
        return float((np.maximum(x, 0.0) * c).sum())

    analytic = c * (x > 0.0)
    return _check_array("relu/dx", analytic, loss, x, PRIMITIVE_TOL)


def check_dropout(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 8))
    c = rng.normal(size=(4, 8))
    rate = 0.5
    mask = nn._dropout_mask(x.shape, rate, np.random.default_rng(seed + 1))

    def loss() -> float:
        return float((x * mask / (1.0 - rate) * c).sum())

    analytic = c * mask / (1.0 - rate)
    return _check_array("dropout/dx", analytic, loss, x, PRIMITIVE_TOL)


def _mlp_setup(seed: int, train: bool):
    rng = np.random.default_rng(seed)
    config = nn.MlpConfig(input_dim=6, output_dim=5, hidden_dim=16, num_blocks=2, dropout=0.5 if train else 0.0)
    params = nn.init_params(config, np.random.default_rng(seed + 1))
    x = rng.normal(size=(3, 6))
    c = rng.normal(size=(3, 5))
    return config, params, x, c


def check_mlp(seed: int, train: bool) -> CheckResult:
    config, params, x, c = _mlp_setup(seed, train)
    mode = "train" if train else "eval"

    def forward_rng():
        return np.random.default_rng(seed + 2)  # pins the dropout masks

    def loss() -> float:
        y, _ = nn.forward(params, config, x, train=train, rng=forward_rng())
        return float((y * c).sum())

    _, cache = nn.forward(params, config, x, train=train, rng=forward_rng())
    grads, dx = nn.backward(params, config, cache, c)
    results = [_check_array(f"mlp-{mode}/dx", dx, loss, x, PRIMITIVE_TOL)]
    for name in nn.param_names(config):
        results.append(_check_array(f"mlp-{mode}/{name}", grads[name], loss, params[name], PRIMITIVE_TOL))
    return _merge(f"mlp-{mode}", results)


def check_gm(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for alpha in (1.0, 100.0, 1e4):
        x = np.concatenate([rng.uniform(-3, 3, size=20) * np.sqrt(alpha), [0.0]])
        analytic = gm_grad(x, alpha)
        numeric = (gm_loss(x + H, alpha) - gm_loss(x - H, alpha)) / (2.0 * H)
        for a, f in zip(analytic, numeric):
            worst = max(worst, _rel_err(a, f))
    return CheckResult(name="gm-loss", max_rel_err=worst, tolerance=PRIMITIVE_TOL)


def check_l1(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(4, 17, 3))
    gt = pred + np.where(rng.normal(size=pred.shape) > 0, 1.0, -1.0) * rng.uniform(0.05, 2.0, size=pred.shape)
    _, grad = l1_pose_loss(pred, gt)

    def loss() -> float:
        return l1_pose_loss(pred, gt)[0]

    return _check_array("l1/dpred", grad, loss, pred, PRIMITIVE_TOL)


def check_total_loss(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    config = RobustLossConfig(alpha=100.0, lambda_weight=0.7)
    pred_poses = rng.normal(size=(3, 12))
    gt_poses = pred_poses + np.where(rng.normal(size=pred_poses.shape) > 0, 1.0, -1.0) * rng.uniform(0.05, 1.5, size=pred_poses.shape)
    pred_d = rng.normal(scale=20.0, size=(3, 14))
    target_d = rng.normal(scale=20.0, size=(3, 14))
    valid = rng.random(size=(3, 14)) > 0.3

    def loss() -> float:
        return total_loss(pred_poses, gt_poses, pred_d, target_d, valid, config)[0]

    _, grad_poses, grad_depths = total_loss(pred_poses, gt_poses, pred_d, target_d, valid, config)
    results = [
        _check_array("total-loss/dposes", grad_poses, loss, pred_poses, PRIMITIVE_TOL),
        _check_array("total-loss/ddepths", grad_depths, loss, pred_d, PRIMITIVE_TOL),
    ]
    return _merge("total-loss", results)


def _pipeline_setup(seed: int):
    rng = np.random.default_rng(seed)
    spec = default_skeleton()
    dim = 3 * spec.num_joints
    k = len(spec.depth_subset)
    stats = StandardizerStats(
        input_mean=rng.normal(size=dim),
        input_std=rng.uniform(0.5, 2.0, size=dim),
        output_mean=rng.normal(scale=100.0, size=dim),
        output_std=rng.uniform(50.0, 300.0, size=dim),
        depth_offset_mean=rng.normal(scale=10.0, size=k),
        depth_offset_std=rng.uniform(10.0, 50.0, size=k),
    )
    pose_config = nn.MlpConfig(input_dim=dim, output_dim=dim, hidden_dim=24, num_blocks=2, dropout=0.5)
    depth_config = nn.MlpConfig(input_dim=dim, output_dim=k, hidden_dim=24, num_blocks=2, dropout=0.5)
    pose_params = nn.init_params(pose_config, np.random.default_rng(seed + 1))
    depth_params = nn.init_params(depth_config, np.random.default_rng(seed + 2))
    x = rng.normal(size=(4, dim))
    return spec, stats, pose_config, pose_params, depth_config, depth_params, x, rng


def check_weak_path(seed: int) -> CheckResult:
    """End-to-end: inputs -> pose net -> depth head -> robust loss."""
    spec, stats, pose_config, pose_params, depth_config, depth_params, x, rng = _pipeline_setup(seed)
    k = len(spec.depth_subset)
    config = RobustLossConfig(alpha=1e4, lambda_weight=1.0)
    valid = rng.random(size=(4, k)) > 0.2

    o0, _ = nn.forward(pose_params, pose_config, x, train=True, rng=np.random.default_rng(seed + 3))
    d0, _ = predicted_joint_depths(
        o0, depth_params, depth_config, stats, spec, train=True, rng=np.random.default_rng(seed + 4)
    )
    targets = d0 + rng.normal(scale=60.0, size=d0.shape)

    def run(compute_grads: bool):
        o, pose_cache = nn.forward(pose_params, pose_config, x, train=True, rng=np.random.default_rng(seed + 3))
        depths, head_cache = predicted_joint_depths(
            o, depth_params, depth_config, stats, spec, train=True, rng=np.random.default_rng(seed + 4)
        )
        value, _, d_depths = total_loss(
            np.zeros((0, 1)), np.zeros((0, 1)), depths, targets, valid, config
        )
        if not compute_grads:
            return value
        depth_grads, d_o = joint_depth_backward(d_depths, head_cache, depth_params, depth_config, stats)
        pose_grads, _ = nn.backward(pose_params, pose_config, pose_cache, d_o)
        return value, pose_grads, depth_grads

    _, pose_grads, depth_grads = run(True)
    sample_rng = np.random.default_rng(seed + 5)
    results = []
    for name in nn.param_names(pose_config):
        results.append(
            _check_array(f"weak/pose.{name}", pose_grads[name], lambda: run(False), pose_params[name],
                         END_TO_END_TOL, max_entries=12, rng=sample_rng)
        )
    for name in nn.param_names(depth_config):
        results.append(
            _check_array(f"weak/depth.{name}", depth_grads[name], lambda: run(False), depth_params[name],
                         END_TO_END_TOL, max_entries=12, rng=sample_rng)
        )
    return _merge("weak-path", results, tol=END_TO_END_TOL)


def check_annotated_path(seed: int) -> CheckResult:
    """End-to-end: inputs -> pose net -> standardized L1."""
    spec, stats, pose_config, pose_params, _, _, x, rng = _pipeline_setup(seed)
    dim = 3 * spec.num_joints
    targets = rng.normal(size=(4, dim))

    def run(compute_grads: bool):
        o, cache = nn.forward(pose_params, pose_config, x, train=True, rng=np.random.default_rng(seed + 3))
        value, d_o = l1_pose_loss(o, targets)
        if not compute_grads:
            return value
        grads, _ = nn.backward(pose_params, pose_config, cache, d_o)
        return value, grads

    _, grads = run(True)
    sample_rng = np.random.default_rng(seed + 6)
    results = [
        _check_array(f"annotated/{name}", grads[name], lambda: run(False), pose_params[name],
                     END_TO_END_TOL, max_entries=12, rng=sample_rng)
        for name in nn.param_names(pose_config)
    ]
    return _merge("annotated-path", results, tol=END_TO_END_TOL)


def _merge(name: str, results: list[CheckResult], tol: float = PRIMITIVE_TOL) -> CheckResult:
    return CheckResult(name=name, max_rel_err=max(r.max_rel_err for r in results), tolerance=tol)


def run_all(seed: int = 0) -> list[CheckResult]:
    """The full gradient suite; all analytic gradients vs finite differences."""
    return [
        check_linear(seed),
        check_layernorm(seed + 10),
        check_relu(seed + 20),
        check_dropout(seed + 30),
        check_mlp(seed + 40, train=False),
        check_mlp(seed + 50, train=True),
        check_gm(seed + 60),
        check_l1(seed + 70),
        check_total_loss(seed + 80),
        check_annotated_path(seed + 90),
        check_weak_path(seed + 100),
    ]
