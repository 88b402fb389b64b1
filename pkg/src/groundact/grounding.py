"""Keypoint grounding: (RGB image, instruction) -> per-pixel likelihood heatmap.

A small two-stream network: a bag-of-tokens text encoder and a convolutional
encoder-decoder over the image, fused by tiling the text vector across the
spatial bottleneck. The predicted keypoint is the heatmap argmax; training
uses per-pixel binary cross-entropy against Gaussian targets centered on the
labeled pixel.

Pixels are (u, v) = (column, row); heatmaps are numpy arrays of shape
(height, width).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import nn

OOV_TOKEN = "<oov>"


class ResolutionMismatch(ValueError):
    """Image resolution differs from the model's working resolution."""


class AugmentationExhausted(RuntimeError):
    """Could not draw an augmentation keeping the label inside the frame."""


class EmptyDataset(ValueError):
    pass


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; punctuation and case are ignored."""
    return _TOKEN_RE.findall(text.lower())


def context_token(skill_label: str) -> str:
    return f"<skill:{skill_label}>"


def build_vocab(texts, context_labels=()) -> dict[str, int]:
    """Token -> id map with a reserved OOV slot at id 0. Sorted for stable ids."""
    tokens = set()
    for t in texts:
        tokens.update(tokenize(t))
    vocab = {OOV_TOKEN: 0}
    for tok in sorted(tokens):
        vocab[tok] = len(vocab)
    for label in sorted(context_labels):
        vocab[context_token(label)] = len(vocab)
    return vocab


@dataclass
class GroundingSample:
    """One supervised grounding example."""

    image: np.ndarray  # (H, W, 3) uint8
    instruction: str
    pixel: tuple[float, float]  # (u, v) label
    skill: str

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError("instruction is empty after trimming")
        h, w = self.image.shape[:2]
        u, v = self.pixel
        if not (0 <= u < w and 0 <= v < h):
            raise ValueError(f"label pixel {self.pixel} outside {w}x{h} image")


def gaussian_target(pixel, sigma: float, width: int, height: int) -> np.ndarray:
    """Unnormalized Gaussian heatmap with value exactly 1 at the label pixel."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    u0, v0 = pixel
    if not (0 <= u0 < width and 0 <= v0 < height):
        raise ValueError(f"pixel {pixel} out of bounds")
    us = np.arange(width, dtype=np.float64)
    vs = np.arange(height, dtype=np.float64)
    du2 = (us - u0) ** 2
    dv2 = (vs - v0) ** 2
    return np.exp(-(dv2[:, None] + du2[None, :]) / (2.0 * sigma * sigma))


def argmax_keypoint(heatmap: np.ndarray) -> tuple[int, int]:
    """Pixel (u, v) of the maximum cell; ties go to the lowest row-major index."""
    if heatmap.size == 0:
        raise ValueError("empty heatmap")
    flat = int(np.argmax(heatmap))
    h, w = heatmap.shape
    return flat % w, flat // w


def bce_heatmap_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean per-pixel binary cross-entropy, predictions clamped at 1e-7."""
    if pred.shape != target.shape:
        raise nn.ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    head = nn.BCELossHead(target)
    return head.forward(pred)


# ---------------------------------------------------------------------------
# Model


@dataclass
class GroundingConfig:
    width: int = 160
    height: int = 120
    sigma: float = 4.0
    text_dim: int = 24
    channels: tuple[int, int, int] = (8, 16, 24)
    seed: int = 0


class GroundingModel:
    """Two-stream heatmap network; see the module docstring for the layout."""

    def __init__(self, config: GroundingConfig, vocab: dict[str, int]):
        if config.width % 8 or config.height % 8:
            raise ValueError("working resolution must be divisible by 8")
        self.config = config
        self.vocab = dict(vocab)
        rng = np.random.default_rng(config.seed)
        c1, c2, c3 = config.channels
        t = config.text_dim
        self.embed = nn.EmbeddingBag(len(vocab), t, rng)
        self.text_mlp = nn.Sequential(
            [nn.Linear(t, 2 * t, rng), nn.ReLU(), nn.Linear(2 * t, t, rng)]
        )
        self.enc1 = nn.Conv2d(3, c1, 3, rng)
        self.enc2 = nn.Conv2d(c1, c2, 3, rng)
        self.enc3 = nn.Conv2d(c2, c3, 3, rng)
        self.fuse = nn.Conv2d(c3 + t, c3, 3, rng)
        self.dec1 = nn.Conv2d(c3, c2, 3, rng)
        self.dec2 = nn.Conv2d(c2, c1, 3, rng)
        self.head = nn.Conv2d(c1, 1, 3, rng)
        self._relus = [nn.ReLU() for _ in range(6)]
        self._pools = [nn.MaxPool2() for _ in range(3)]
        self._ups = [nn.Upsample2() for _ in range(3)]
        self._sig = nn.Sigmoid()
        self._named = {
            "embed": self.embed,
            "text_mlp": self.text_mlp,
            "enc1": self.enc1,
            "enc2": self.enc2,
            "enc3": self.enc3,
            "fuse": self.fuse,
            "dec1": self.dec1,
            "dec2": self.dec2,
            "head": self.head,
        }

    # -- parameter plumbing

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._named.items():
            for k, v in layer.params().items():
                out[f"{name}.{k}"] = v
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._named.items():
            for k, v in layer.grads().items():
                out[f"{name}.{k}"] = v
        return out

    def zero_grads(self):
        for layer in self._named.values():
            layer.zero_grads()

    # -- text

    def token_ids(self, instruction: str, context_label: str | None = None) -> np.ndarray:
        toks = tokenize(instruction)
        if context_label is not None:
            toks.append(context_token(context_label))
        return np.array([self.vocab.get(tok, 0) for tok in toks], dtype=np.intp)

    def encode_instruction(self, instruction: str, context_label: str | None = None):
        """Deterministic fixed-size embedding of an instruction."""
        return self.text_mlp.forward(self.embed.forward(self.token_ids(instruction, context_label)))

    # -- image/heatmap

    def forward(self, image: np.ndarray, instruction: str, context_label: str | None = None):
        """Full forward pass; caches intermediates for backward()."""
        cfg = self.config
        if image.shape[:2] != (cfg.height, cfg.width):
            raise ResolutionMismatch(
                f"image {image.shape[1]}x{image.shape[0]} != model {cfg.width}x{cfg.height}"
            )
        x = np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float64) / 255.0

        tvec = self.text_mlp.forward(self.embed.forward(self.token_ids(instruction, context_label)))

        h = self._pools[0].forward(self._relus[0].forward(self.enc1.forward(x)))
        h = self._pools[1].forward(self._relus[1].forward(self.enc2.forward(h)))
        h = self._pools[2].forward(self._relus[2].forward(self.enc3.forward(h)))
        self._c3_channels = h.shape[0]
        tile = np.broadcast_to(tvec[:, None, None], (tvec.size, h.shape[1], h.shape[2]))
        fused = np.concatenate([h, tile], axis=0)
        h = self._relus[3].forward(self.fuse.forward(fused))
        h = self._relus[4].forward(self.dec1.forward(self._ups[0].forward(h)))
        h = self._relus[5].forward(self.dec2.forward(self._ups[1].forward(h)))
        logits = self.head.forward(self._ups[2].forward(h))
        heat = self._sig.forward(logits)
        return heat[0]

    def backward(self, dheat: np.ndarray):
        d = self._sig.backward(dheat[None, :, :])
        d = self._ups[2].backward(self.head.backward(d))
        d = self._ups[1].backward(self.dec2.backward(self._relus[5].backward(d)))
        d = self._ups[0].backward(self.dec1.backward(self._relus[4].backward(d)))
        d = self.fuse.backward(self._relus[3].backward(d))
        c3 = self._c3_channels
        dh, dtile = d[:c3], d[c3:]
        dtvec = dtile.sum(axis=(1, 2))
        self.embed.backward(self.text_mlp.backward(dtvec))
        d = self._relus[2].backward(self._pools[2].backward(dh))
        d = self._relus[1].backward(self._pools[1].backward(self.enc3.backward(d)))
        d = self._relus[0].backward(self._pools[0].backward(self.enc2.backward(d)))
        self.enc1.backward(d)

    # -- persistence

    def save(self, path):
        nn.save_checkpoint(
            path,
            self.params(),
            extra={
                "kind": "grounding",
                "config": {
                    "width": self.config.width,
                    "height": self.config.height,
                    "sigma": self.config.sigma,
                    "text_dim": self.config.text_dim,
                    "channels": list(self.config.channels),
                    "seed": self.config.seed,
                },
                "vocab": self.vocab,
            },
        )

    @classmethod
    def load(cls, path) -> "GroundingModel":
        header, params = nn.load_checkpoint(path)
        c = header["config"]
        cfg = GroundingConfig(
            width=c["width"],
            height=c["height"],
            sigma=c["sigma"],
            text_dim=c["text_dim"],
            channels=tuple(c["channels"]),
            seed=c["seed"],
        )
        model = cls(cfg, header["vocab"])
        own = model.params()
        for k, v in params.items():
            own[k][...] = v
        return model


def predict_heatmap(
    model: GroundingModel, image: np.ndarray, instruction: str, context_label: str | None = None
) -> np.ndarray:
    return model.forward(image, instruction, context_label)


# ---------------------------------------------------------------------------
# Augmentation


@dataclass
class AugmentParams:
    angle_deg: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    scale: float = 1.0
    brightness: float = 0.0  # multiplicative: 1 + b
    contrast: float = 0.0  # multiplicative about 0.5: 1 + c
    hue_shift: float = 0.0  # degrees on the [0, 360) hue circle


def draw_augment_params(rng: np.random.Generator, width: int, height: int) -> AugmentParams:
    return AugmentParams(
        angle_deg=rng.uniform(-15.0, 15.0),
        tx=rng.uniform(-0.1, 0.1) * width,
        ty=rng.uniform(-0.1, 0.1) * height,
        scale=rng.uniform(0.9, 1.1),
        brightness=rng.uniform(-0.2, 0.2),
        contrast=rng.uniform(-0.2, 0.2),
        hue_shift=rng.uniform(-0.2, 0.2) * 360.0,
    )


def affine_matrix(params: AugmentParams, width: int, height: int) -> np.ndarray:
    m = cv2.getRotationMatrix2D(((width - 1) / 2.0, (height - 1) / 2.0), params.angle_deg, params.scale)
    m[0, 2] += params.tx
    m[1, 2] += params.ty
    return m


def apply_augmentation(sample: GroundingSample, params: AugmentParams) -> GroundingSample:
    """Warp image and label through the same affine, then jitter colorspace.

    Raises ValueError if the warped label leaves the frame (the caller retries).
    """
    h, w = sample.image.shape[:2]
    m = affine_matrix(params, w, h)
    u, v = sample.pixel
    nu = m[0, 0] * u + m[0, 1] * v + m[0, 2]
    nv = m[1, 0] * u + m[1, 1] * v + m[1, 2]
    if not (0 <= nu < w and 0 <= nv < h):
        raise ValueError("warped label left the frame")

    img = cv2.warpAffine(sample.image, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT)
    f = img.astype(np.float32) / 255.0
    if params.hue_shift != 0.0:
        hsv = cv2.cvtColor(f, cv2.COLOR_RGB2HSV)
        hsv[:, :, 0] = np.mod(hsv[:, :, 0] + params.hue_shift, 360.0)
        f = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    f = (f - 0.5) * (1.0 + params.contrast) + 0.5
    f = f * (1.0 + params.brightness)
    img = np.clip(f * 255.0, 0, 255).astype(np.uint8)
    return GroundingSample(image=img, instruction=sample.instruction, pixel=(nu, nv), skill=sample.skill)


def augment_sample(
    sample: GroundingSample, rng: np.random.Generator, max_attempts: int = 10
) -> GroundingSample:
    h, w = sample.image.shape[:2]
    for _ in range(max_attempts):
        try:
            return apply_augmentation(sample, draw_augment_params(rng, w, h))
        except ValueError:
            continue
    raise AugmentationExhausted(f"label {sample.pixel} rejected {max_attempts} times")


# ---------------------------------------------------------------------------
# Training


@dataclass
class GroundingTrainConfig:
    epochs: int = 4
    lr: float = 1e-4
    augment_factor: int = 8
    val_fraction: float = 0.1
    seed: int = 0
    model: GroundingConfig = field(default_factory=GroundingConfig)
    context_labels: tuple[str, ...] = ()
    log_every: int = 0  # steps; 0 disables
    pixel_tolerance: float = 8.0


def split_samples(samples, val_fraction: float, seed: int):
    """Deterministic disjoint train/val split."""
    idx = np.random.default_rng(seed).permutation(len(samples))
    n_val = int(round(len(samples) * val_fraction))
    val_ids = set(map(int, idx[:n_val]))
    train = [s for i, s in enumerate(samples) if i not in val_ids]
    val = [s for i, s in enumerate(samples) if i in val_ids]
    return train, val


def evaluate_grounding(model: GroundingModel, samples, pixel_tolerance: float = 8.0):
    """Mean BCE loss and fraction of argmax keypoints within tolerance."""
    if not samples:
        return {"loss": float("nan"), "accuracy": float("nan")}
    losses, hits = [], 0
    for s in samples:
        heat = model.forward(s.image, s.instruction, context_label=s.skill)
        target = gaussian_target(s.pixel, model.config.sigma, model.config.width, model.config.height)
        losses.append(bce_heatmap_loss(heat, target))
        u, v = argmax_keypoint(heat)
        if np.hypot(u - s.pixel[0], v - s.pixel[1]) <= pixel_tolerance:
            hits += 1
    return {"loss": float(np.mean(losses)), "accuracy": hits / len(samples)}


def train_grounding(samples, config: GroundingTrainConfig):
    """Train on augmented samples; returns (model, history dict)."""
    if not samples:
        raise EmptyDataset("no grounding samples")
    train, val = split_samples(samples, config.val_fraction, config.seed)
    if not train:
        raise EmptyDataset("empty training split")

    labels = set(config.context_labels) | {s.skill for s in samples}
    vocab = build_vocab([s.instruction for s in train], context_labels=sorted(labels))
    model = GroundingModel(config.model, vocab)

    rng = np.random.default_rng(config.seed + 1)
    augmented = []
    for s in train:
        augmented.append(s)
        for _ in range(max(0, config.augment_factor - 1)):
            augmented.append(augment_sample(s, rng))

    targets = [
        gaussian_target(s.pixel, config.model.sigma, config.model.width, config.model.height)
        for s in augmented
    ]

    opt = nn.Adam(model.params(), nn.AdamConfig(lr=config.lr))
    history = {"train_loss": [], "val_loss": [], "val_accuracy": []}
    ev0 = evaluate_grounding(model, val, config.pixel_tolerance)
    history["val_loss"].append(ev0["loss"])
    history["val_accuracy"].append(ev0["accuracy"])

    order = np.arange(len(augmented))
    step = 0
    for _ in range(config.epochs):
        rng.shuffle(order)
        epoch_losses = []
        for i in order:
            s = augmented[i]
            model.zero_grads()
            heat = model.forward(s.image, s.instruction, context_label=s.skill)
            head = nn.BCELossHead(targets[i])
            loss = head.forward(heat)
            model.backward(head.backward())
            opt.step(model.grads())
            epoch_losses.append(loss)
            step += 1
            if config.log_every and step % config.log_every == 0:
                print(f"[grounding] step {step} loss {np.mean(epoch_losses[-config.log_every:]):.5f}")
        ev = evaluate_grounding(model, val, config.pixel_tolerance)
        history["train_loss"].append(float(np.mean(epoch_losses)))
        history["val_loss"].append(ev["loss"])
        history["val_accuracy"].append(ev["accuracy"])
    return model, history
