"""Seeded synthetic scenes with exact boxes and exact optical flow.

Frames show textured "actor" rectangles on a smooth noisy background.
Actors translate at integer velocities and bounce off the borders; the
texture travels with the actor, so warping frame ``t`` by the emitted flow
reproduces the actor pixels of frame ``t + 1`` exactly.  Class 0 actors
move horizontally, class 1 actors vertically.  Pixel values are multiples
of 1/255 so frames survive 8-bit image files unchanged.
"""
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .boxes import Box
from .flow import FlowField

HORIZONTAL, VERTICAL = 0, 1
NUM_CLASSES = 2


@dataclass
class Actor:
    x: int
    y: int
    width: int
    height: int
    vx: int = 0
    vy: int = 0
    label: int = HORIZONTAL

    @property
    def box(self):
        return Box(self.x, self.y, self.x + self.width, self.y + self.height)


@dataclass
class SceneConfig:
    size: tuple = (64, 64)
    frames: int = 8
    n_actors: int = 1
    min_actor: int = 20
    max_actor: int = 32
    min_speed: int = 1
    max_speed: int = 3
    actors: list = field(default=None)  # explicit actors override random placement


@dataclass
class SyntheticVideo:
    frames: np.ndarray  # (T, H, W, 3) float32
    flows: list  # T FlowFields; flows[t] moves frame t to t + 1
    boxes: list  # per frame: list of Box
    labels: list  # per actor
    label: int  # class of the first actor, -1 when empty


def _rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed))


def _background(rng, h, w):
    coarse = rng.uniform(0.15, 0.55, size=(h // 8 + 2, w // 8 + 2, 1))
    tint = rng.uniform(-0.04, 0.04, size=(1, 1, 3))
    base = ops.bilinear_resize(coarse, h, w) + tint
    base = base + rng.normal(0, 0.04, size=(h, w, 3))
    return np.clip(base, 0, 1)


def _actor_texture(rng, w, h):
    colour = np.array([0.95, 0.65, 0.25]) + rng.uniform(-0.05, 0.05, 3)
    yy, xx = np.mgrid[0:h, 0:w]
    stripes = 0.12 * (((xx + yy) // 3) % 2)[..., None]
    return np.clip(colour - stripes + rng.normal(0, 0.03, (h, w, 3)), 0, 1)


def _random_actors(rng, cfg, label=None):
    h, w = cfg.size
    actors = []
    for _ in range(cfg.n_actors):
        aw = int(rng.integers(cfg.min_actor, cfg.max_actor + 1))
        ah = int(rng.integers(cfg.min_actor, cfg.max_actor + 1))
        if aw > w or ah > h:
            raise ValueError(f"actor {aw}x{ah} does not fit in a {w}x{h} image")
        x = int(rng.integers(0, w - aw + 1))
        y = int(rng.integers(0, h - ah + 1))
        cls = int(rng.integers(0, NUM_CLASSES)) if label is None else label
        speed = int(rng.integers(cfg.min_speed, cfg.max_speed + 1)) * int(rng.choice([-1, 1]))
        vx, vy = (speed, 0) if cls == HORIZONTAL else (0, speed)
        actors.append(Actor(x, y, aw, ah, vx, vy, cls))
    return actors


def _quantize8(img):
    return (np.round(img * 255) / 255).astype(np.float32)


def _compose(background, actors, textures):
    img = background.copy()
    for a, tex in zip(actors, textures):
        img[a.y:a.y + a.height, a.x:a.x + a.width] = tex
    return _quantize8(img)


def gen_action_image(seed, config=None):
    """One still image and its actor boxes."""
    cfg = config or SceneConfig()
    rng = _rng(seed)
    h, w = cfg.size
    bg = _background(rng, h, w)
    actors = list(cfg.actors) if cfg.actors is not None else _random_actors(rng, cfg)
    for a in actors:
        if a.width > w or a.height > h:
            raise ValueError(f"actor {a.width}x{a.height} does not fit in a {w}x{h} image")
    textures = [_actor_texture(rng, a.width, a.height) for a in actors]
    return _compose(bg, actors, textures), [a.box for a in actors]


def _step(a, w, h):
    """Advance one frame with reflection at the borders; returns the new actor."""
    vx, vy = a.vx, a.vy
    nx, ny = a.x + vx, a.y + vy
    if nx < 0 or nx + a.width > w:
        vx = -vx
        nx = a.x + vx
    if ny < 0 or ny + a.height > h:
        vy = -vy
        ny = a.y + vy
    nx = min(max(nx, 0), w - a.width)
    ny = min(max(ny, 0), h - a.height)
    return Actor(nx, ny, a.width, a.height, vx, vy, a.label)


def gen_action_video(seed, config=None, label=None):
    """Frames, exact flow, per-frame boxes and the action class."""
    cfg = config or SceneConfig()
    rng = _rng(seed)
    h, w = cfg.size
    bg = _background(rng, h, w)
    actors = list(cfg.actors) if cfg.actors is not None else _random_actors(rng, cfg, label)
    textures = [_actor_texture(rng, a.width, a.height) for a in actors]
    frames, flows, boxes = [], [], []
    for _ in range(cfg.frames):
        frames.append(_compose(bg, actors, textures))
        boxes.append([a.box for a in actors])
        moved = [_step(a, w, h) for a in actors]
        u = np.zeros((h, w), np.float32)
        v = np.zeros((h, w), np.float32)
        for a, b in zip(actors, moved):
            u[a.y:a.y + a.height, a.x:a.x + a.width] = b.x - a.x
            v[a.y:a.y + a.height, a.x:a.x + a.width] = b.y - a.y
        flows.append(FlowField(u, v))
        actors = moved
    labels = [a.label for a in actors]
    return SyntheticVideo(np.stack(frames), flows, boxes, labels, labels[0] if labels else -1)


def scene_seed(base_seed, split, index):
    """Independent seed for scene ``index`` of a named split."""
    return (int(base_seed), {"train": 0, "test": 1}.get(split, 2), int(index))
