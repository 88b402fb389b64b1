"""Keypoint-conditioned waypoint inference over point clouds.

The actor consumes a fused colored cloud (N, 6) plus a one-channel keypoint
mask and predicts, per point and per waypoint slot k: a class logit (is this
point nearest to waypoint k), a 3-D position offset from the point itself,
and a 4-D quaternion. Output layout along the feature axis is
[K logits | K*3 offsets | K*4 quaternions], d = K*8.

Training supervises the logits with per-point cross-entropy against
nearest-waypoint labels, and the offset/quaternion slots of each point's own
label with an L1 position term and a (1 - <q_hat, q>) orientation term.
Inference picks, for each slot k, the point with the highest class-k logit
and reads that point's slot-k pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import nn
from .geometry import CameraExtrinsics, CameraIntrinsics, Pose, deproject, normalize_quat

PIXEL_MATCH_EPS_M = 0.005  # cloud point <-> deprojected keypoint association


class EmptyMask(RuntimeError):
    """No usable keypoint region (depth hole or no cloud point nearby)."""


class InconsistentK(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass
class KeypointMask:
    """Per-point {0,1} channel marking points near the deprojected keypoint."""

    values: np.ndarray
    radius_px: int


def disc_pixels(keypoint, radius_px: int, width: int, height: int) -> np.ndarray:
    """Integer pixels strictly within radius of the keypoint, plus the keypoint."""
    u0, v0 = int(round(keypoint[0])), int(round(keypoint[1]))
    r = int(radius_px)
    us = np.arange(max(0, u0 - r), min(width, u0 + r + 1))
    vs = np.arange(max(0, v0 - r), min(height, v0 + r + 1))
    uu, vv = np.meshgrid(us, vs)
    inside = (uu - u0) ** 2 + (vv - v0) ** 2 < r * r
    inside |= (uu == u0) & (vv == v0)
    return np.stack([uu[inside], vv[inside]], axis=1)


def annotate_keypoint_mask(
    cloud: np.ndarray,
    depth: np.ndarray,
    keypoint,
    radius_px: int,
    intr: CameraIntrinsics,
    extr: CameraExtrinsics,
    eps_m: float = PIXEL_MATCH_EPS_M,
) -> KeypointMask:
    """Mark cloud points within eps of any point deprojected from the keypoint disc."""
    h, w = depth.shape
    pixels = disc_pixels(keypoint, radius_px, w, h)
    ds = depth[pixels[:, 1], pixels[:, 0]]
    ok = np.isfinite(ds) & (ds > 0)
    if not ok.any():
        raise EmptyMask(f"no valid depth within {radius_px}px of {tuple(keypoint)}")
    region = np.stack(
        [deproject((u, v), d, intr, extr) for (u, v), d in zip(pixels[ok], ds[ok])]
    )
    dist, _ = cKDTree(region).query(cloud[:, :3], k=1)
    values = (dist <= eps_m).astype(np.float64)
    if not values.any():
        raise EmptyMask("no cloud point near the deprojected keypoint region")
    return KeypointMask(values=values, radius_px=int(radius_px))


def nearest_waypoint_labels(cloud: np.ndarray, waypoints: list[Pose]) -> np.ndarray:
    """Per-point index of the closest waypoint position; ties -> lowest index."""
    if not waypoints:
        raise ValueError("need at least one waypoint")
    pos = np.stack([wp.position for wp in waypoints])
    d2 = ((cloud[:, None, :3] - pos[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def downsample_cloud(cloud: np.ndarray, budget: int, rng: np.random.Generator, mask=None):
    """Random subsample to `budget` points (pad with replacement if short).

    Returns (cloud, mask) with the mask channel carried through when given.
    """
    d = cloud.shape[0]
    if d == budget:
        idx = np.arange(d)
    elif d > budget:
        idx = rng.choice(d, size=budget, replace=False)
    else:
        idx = np.concatenate([np.arange(d), rng.choice(d, size=budget - d, replace=True)])
    out = cloud[idx]
    if mask is None:
        return out, None
    return out, np.asarray(mask)[idx]


# ---------------------------------------------------------------------------
# Model


@dataclass
class ActorConfig:
    k_waypoints: int = 1
    local_dim: int = 32
    global_dim: int = 64
    head_dim: int = 64
    point_budget: int = 4096
    seed: int = 0
    lambda_cls: float = 1.0
    lambda_ori: float = 1.0
    lambda_pos: float = 10.0
    # feature scaling for [xyz - centroid | rgb | mask]
    feature_scale: tuple = (5.0, 5.0, 5.0, 1.0, 1.0, 1.0, 1.0)

    @property
    def out_dim(self) -> int:
        return self.k_waypoints * 8


class ActorModel:
    """Shared per-point MLP + global max-pool + per-point heads."""

    def __init__(self, config: ActorConfig):
        if config.k_waypoints < 1:
            raise ValueError("K must be >= 1")
        self.config = config
        rng = np.random.default_rng(config.seed)
        h1, hg, hh = config.local_dim, config.global_dim, config.head_dim
        self.local = nn.Sequential(
            [nn.Linear(7, h1, rng), nn.ReLU(), nn.Linear(h1, h1, rng), nn.ReLU()]
        )
        self.gproj = nn.Sequential([nn.Linear(h1, hg, rng), nn.ReLU()])
        self.head = nn.Sequential(
            [nn.Linear(h1 + hg, hh, rng), nn.ReLU(), nn.Linear(hh, config.out_dim, rng)]
        )
        self._named = {"local": self.local, "gproj": self.gproj, "head": self.head}

    def params(self):
        return {
            f"{n}.{k}": v for n, l in self._named.items() for k, v in l.params().items()
        }

    def grads(self):
        return {f"{n}.{k}": v for n, l in self._named.items() for k, v in l.grads().items()}

    def zero_grads(self):
        for l in self._named.values():
            l.zero_grads()

    def features(self, cloud: np.ndarray, mask: np.ndarray) -> np.ndarray:
        xyz = cloud[:, :3]
        centered = xyz - xyz.mean(axis=0)
        feats = np.concatenate([centered, cloud[:, 3:6], mask[:, None]], axis=1)
        return feats * np.asarray(self.config.feature_scale)

    def forward(self, cloud: np.ndarray, mask) -> np.ndarray:
        mask = mask.values if isinstance(mask, KeypointMask) else np.asarray(mask, dtype=np.float64)
        if cloud.ndim != 2 or cloud.shape[1] != 6:
            raise nn.ShapeMismatch(f"cloud must be (N, 6), got {cloud.shape}")
        if mask.shape != (cloud.shape[0],):
            raise nn.ShapeMismatch(f"mask length {mask.shape} != {cloud.shape[0]} points")
        feats = self.features(cloud, mask)
        local = self.local.forward(feats)  # (N, h1)
        g = self.gproj.forward(local)  # (N, hg)
        self._gmax_idx = g.argmax(axis=0)  # winner point per global channel
        gmax = g[self._gmax_idx, np.arange(g.shape[1])]
        self._n_points = cloud.shape[0]
        fused = np.concatenate([local, np.broadcast_to(gmax, (local.shape[0], gmax.size))], axis=1)
        return self.head.forward(fused)

    def backward(self, dout: np.ndarray):
        h1 = self.config.local_dim
        dfused = self.head.backward(dout)
        dlocal = dfused[:, :h1].copy()
        dgmax = dfused[:, h1:].sum(axis=0)
        dg = np.zeros((self._n_points, dgmax.size))
        dg[self._gmax_idx, np.arange(dgmax.size)] = dgmax
        dlocal += self.gproj.backward(dg)
        self.local.backward(dlocal)

    def save(self, path):
        c = self.config
        nn.save_checkpoint(
            path,
            self.params(),
            extra={
                "kind": "actor",
                "config": {
                    "k_waypoints": c.k_waypoints,
                    "local_dim": c.local_dim,
                    "global_dim": c.global_dim,
                    "head_dim": c.head_dim,
                    "point_budget": c.point_budget,
                    "seed": c.seed,
                    "lambda_cls": c.lambda_cls,
                    "lambda_ori": c.lambda_ori,
                    "lambda_pos": c.lambda_pos,
                    "feature_scale": list(c.feature_scale),
                },
            },
        )

    @classmethod
    def load(cls, path) -> "ActorModel":
        header, params = nn.load_checkpoint(path)
        c = dict(header["config"])
        c["feature_scale"] = tuple(c["feature_scale"])
        model = cls(ActorConfig(**c))
        own = model.params()
        for k, v in params.items():
            own[k][...] = v
        return model


def actor_forward(model: ActorModel, cloud: np.ndarray, mask) -> np.ndarray:
    return model.forward(cloud, mask)


def split_actor_output(output: np.ndarray, k: int):
    """(N, K*8) -> logits (N, K), offsets (N, K, 3), quats (N, K, 4)."""
    n = output.shape[0]
    logits = output[:, :k]
    offsets = output[:, k : 4 * k].reshape(n, k, 3)
    quats = output[:, 4 * k :].reshape(n, k, 4)
    return logits, offsets, quats


# ---------------------------------------------------------------------------
# Loss (value + analytic gradient)


def skill_loss_with_grad(
    output: np.ndarray,
    cloud: np.ndarray,
    waypoints: list[Pose],
    lambda_cls: float = 1.0,
    lambda_ori: float = 1.0,
    lambda_pos: float = 10.0,
):
    """Mean per-point loss and its gradient w.r.t. the raw actor output.

    Per point with nearest-waypoint label k:
      lambda_cls * CE(logits, k)
      + lambda_ori * (1 - <normalize(q_hat_k), q_k>)
      + lambda_pos * sum_xyz |p + dp_hat_k - p_k|
    Ground-truth quaternions are sign-canonicalized (w >= 0).
    """
    n, d = output.shape
    k = len(waypoints)
    if d != 8 * k:
        raise nn.ShapeMismatch(f"output dim {d} != K*8 = {8 * k}")
    if cloud.shape[0] != n:
        raise nn.ShapeMismatch(f"cloud has {cloud.shape[0]} points, output has {n}")
    labels = nearest_waypoint_labels(cloud, waypoints)
    logits, offsets, quats = split_actor_output(output, k)
    wp_pos = np.stack([wp.position for wp in waypoints])
    wp_quat = np.stack([normalize_quat(wp.orientation) for wp in waypoints])

    rows = np.arange(n)
    dout = np.zeros_like(output)
    dlogits, doffsets, dquats = split_actor_output(dout, k)

    ce, dce = nn.cross_entropy_rows(logits, labels)
    dlogits += (lambda_cls / n) * dce

    q_raw = quats[rows, labels]  # (N, 4)
    norms = np.linalg.norm(q_raw, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm predicted quaternion")
    q_hat = q_raw / norms[:, None]
    q_gt = wp_quat[labels]
    dots = (q_hat * q_gt).sum(axis=1)
    ori = 1.0 - dots
    # d(dot)/dq_raw = (q_gt - q_hat * dot) / ||q_raw||
    dq = -(q_gt - q_hat * dots[:, None]) / norms[:, None]
    dquats[rows, labels] += (lambda_ori / n) * dq

    pred_pos = cloud[:, :3] + offsets[rows, labels]
    resid = pred_pos - wp_pos[labels]
    pos = np.abs(resid).sum(axis=1)
    doffsets[rows, labels] += (lambda_pos / n) * np.sign(resid)

    loss = float(np.mean(lambda_cls * ce + lambda_ori * ori + lambda_pos * pos))
    return loss, dout


def skill_loss(output, cloud, waypoints, lambda_cls=1.0, lambda_ori=1.0, lambda_pos=10.0) -> float:
    loss, _ = skill_loss_with_grad(output, cloud, waypoints, lambda_cls, lambda_ori, lambda_pos)
    return loss


def infer_waypoints(output: np.ndarray, cloud: np.ndarray, k: int | None = None) -> list[Pose]:
    """Per slot k: the pose read from the point with the highest class-k logit."""
    if output.shape[0] < 1:
        raise ValueError("need at least one point")
    if k is None:
        if output.shape[1] % 8:
            raise nn.ShapeMismatch("output dim must be K*8")
        k = output.shape[1] // 8
    logits, offsets, quats = split_actor_output(output, k)
    waypoints = []
    for slot in range(k):
        i = int(np.argmax(logits[:, slot]))  # ties -> lowest point index
        pos = cloud[i, :3] + offsets[i, slot]
        waypoints.append(Pose(pos, normalize_quat(quats[i, slot])))
    return waypoints


# ---------------------------------------------------------------------------
# Training


@dataclass
class ActorDemo:
    """One demonstration for a single skill."""

    cloud: np.ndarray  # (D, 6) full-resolution fused cloud
    mask: np.ndarray  # (D,) keypoint mask channel
    waypoints: list[Pose]
    instruction: str
    skill: str


@dataclass
class ActorTrainConfig:
    epochs: int = 60
    lr: float = 1e-4
    seed: int = 0
    model: ActorConfig = field(default_factory=ActorConfig)
    log_every: int = 0


def train_skill(demos: list[ActorDemo], config: ActorTrainConfig):
    """Train one skill's actor; returns (model, history)."""
    if not demos:
        raise EmptyDataset("no demonstrations")
    ks = {len(d.waypoints) for d in demos}
    if len(ks) != 1:
        raise InconsistentK(f"demos disagree on waypoint count: {sorted(ks)}")
    k = ks.pop()
    cfg = config.model
    if cfg.k_waypoints != k:
        raise InconsistentK(f"model K={cfg.k_waypoints} but demos have K={k}")

    model = ActorModel(cfg)
    opt = nn.Adam(model.params(), nn.AdamConfig(lr=config.lr))
    rng = np.random.default_rng(config.seed)
    history = {"train_loss": []}
    order = np.arange(len(demos))
    step = 0
    for _ in range(config.epochs):
        rng.shuffle(order)
        losses = []
        for i in order:
            demo = demos[i]
            cloud, mask = downsample_cloud(demo.cloud, cfg.point_budget, rng, demo.mask)
            model.zero_grads()
            out = model.forward(cloud, mask)
            loss, dout = skill_loss_with_grad(
                out, cloud, demo.waypoints, cfg.lambda_cls, cfg.lambda_ori, cfg.lambda_pos
            )
            model.backward(dout)
            opt.step(model.grads())
            losses.append(loss)
            step += 1
            if config.log_every and step % config.log_every == 0:
                print(f"[actor:{demos[0].skill}] step {step} loss {np.mean(losses):.5f}")
        history["train_loss"].append(float(np.mean(losses)))
    return model, history


def evaluate_actor(model: ActorModel, demos: list[ActorDemo], seed: int = 0):
    """Median position (m) and orientation (rad) errors of inferred waypoints."""
    from .geometry import geodesic_angle

    rng = np.random.default_rng(seed)
    pos_errs, ori_errs = [], []
    for demo in demos:
        cloud, mask = downsample_cloud(demo.cloud, model.config.point_budget, rng, demo.mask)
        out = model.forward(cloud, mask)
        pred = infer_waypoints(out, cloud, model.config.k_waypoints)
        for p, g in zip(pred, demo.waypoints):
            pos_errs.append(float(np.linalg.norm(p.position - g.position)))
            ori_errs.append(geodesic_angle(p.orientation, g.orientation))
    return {
        "median_pos_err_m": float(np.median(pos_errs)),
        "median_ori_err_rad": float(np.median(ori_errs)),
    }
