"""Synthetic glyph images and the masked-image exploration environment."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff.tensor import load_tnsr, save_tnsr
from ..rng import Rng, derive_seed

# 5x7 bitmaps of the digits 0-9
_DIGITS = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
]


def glyph_template(c: int) -> np.ndarray:
    """7x5 binary template for class ``c``; classes past 9 get seeded random bitmaps."""
    if c < len(_DIGITS):
        return np.array([[int(ch) for ch in row] for row in _DIGITS[c]], dtype=np.float64)
    rng = Rng(derive_seed(0, "glyph-template", c))
    return (rng.uniform(0, 1, (7, 5)) < 0.45).astype(np.float64)


@dataclass(frozen=True, eq=False)
class GlyphDataset:
    images: np.ndarray  # (N, H, W) in [0, 1]
    labels: np.ndarray  # (N,) int
    train_seeds: tuple[int, ...]
    test_seeds: tuple[int, ...]
    n_classes: int
    seed: int

    def __post_init__(self):
        if set(self.train_seeds) & set(self.test_seeds):
            raise ValueError("train and test seeds must be disjoint")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1:]

    def manifest(self) -> dict:
        counts = np.bincount(self.labels, minlength=self.n_classes)
        return {"n_classes": self.n_classes, "seed": self.seed, "n_examples": len(self),
                "image_shape": list(self.shape), "class_counts": counts.tolist(),
                "train_seeds": list(self.train_seeds), "test_seeds": list(self.test_seeds)}

    def save(self, directory, name: str = "glyphs"):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_tnsr(d / f"{name}_images.tnsr", self.images)
        save_tnsr(d / f"{name}_labels.tnsr", self.labels.astype(np.float64))
        (d / f"{name}.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory, name: str = "glyphs") -> "GlyphDataset":
        d = Path(directory)
        meta = json.loads((d / f"{name}.json").read_text())
        images = load_tnsr(d / f"{name}_images.tnsr")
        labels = load_tnsr(d / f"{name}_labels.tnsr").astype(np.int64)
        return cls(images, labels, tuple(meta["train_seeds"]), tuple(meta["test_seeds"]),
                   meta["n_classes"], meta["seed"])


def _render(template: np.ndarray, H: int, W: int, rng: Rng, noise: float) -> np.ndarray:
    th, tw = template.shape
    cell = max(1, min((H * 7) // (8 * th), (W * 7) // (8 * tw)))
    gh, gw = th * cell, tw * cell
    big = np.kron(template, np.ones((cell, cell)))
    max_dy, max_dx = H - gh, W - gw
    jitter = max(1, cell // 2)
    oy = min(max(max_dy // 2 + rng.integer(2 * jitter + 1) - jitter, 0), max_dy)
    ox = min(max(max_dx // 2 + rng.integer(2 * jitter + 1) - jitter, 0), max_dx)
    img = np.zeros((H, W))
    img[oy:oy + gh, ox:ox + gw] = big * rng.uniform(0.7, 1.0)
    if noise > 0:
        img = img + noise * rng.uniform(-1.0, 1.0, (H, W))
    return np.clip(img, 0.0, 1.0)


def glyph_generate(n_classes: int = 10, n_per_class: int = 100, seed: int = 0, W: int = 32,
                   H: int = 32, test_fraction: float = 0.5, noise: float = 0.15) -> GlyphDataset:
    """Render ``n_per_class`` jittered noisy glyphs per class.

    Example index ``i`` is the environment seed of that image.  Within each
    class a seeded shuffle sends a ``test_fraction`` share to the test seeds.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if n_classes < 1 or W < 8 or H < 8:
        raise ValueError("need at least one class and images of at least 8x8")
    rng = Rng(derive_seed(seed, "glyphs"))
    N = n_classes * n_per_class
    labels = np.array([i % n_classes for i in range(N)], dtype=np.int64)
    images = np.stack([_render(glyph_template(int(c)), H, W, rng, noise) for c in labels])
    split_rng = Rng(derive_seed(seed, "split"))
    train, test = [], []
    n_test = int(round(test_fraction * n_per_class))
    for c in range(n_classes):
        idx = [i for i in range(N) if labels[i] == c]
        perm = split_rng.permutation(len(idx))
        chosen = [idx[j] for j in perm]
        test += chosen[:n_test]
        train += chosen[n_test:]
    return GlyphDataset(images, labels, tuple(sorted(train)), tuple(sorted(test)), n_classes, seed)


N_MOVES = 4
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right as (drow, dcol)


class MaskedImageEnv:
    """Explore a hidden image through a sliding window, then classify it.

    Actions 0-3 move the window (up, down, left, right) by ``move`` pixels,
    clipped to the image; actions ``4 + c`` guess class ``c``.  A correct guess
    pays +1 and ends the episode; a wrong guess pays 0 and play continues.  The
    episode also ends when the step count reaches ``t_max``.  Observations
    show every pixel of every visited window; the rest is 0.
    """

    def __init__(self, dataset: GlyphDataset, window: int = 8, move: int = 8, t_max: int = 20):
        H, W = dataset.shape
        if window > min(H, W):
            raise ValueError("window larger than the image")
        self.dataset = dataset
        self.window = window
        self.move = move
        self.t_max = t_max
        self.n_classes = dataset.n_classes
        self.index = None
        self.pos = None
        self.steps = 0
        self.done = True
        self.mask = np.zeros((H, W), dtype=bool)

    @property
    def n_actions(self) -> int:
        return N_MOVES + self.n_classes

    @property
    def observation_shape(self) -> tuple[int, int, int]:
        return (1,) + tuple(self.dataset.shape)

    def _reveal(self):
        r, c = self.pos
        self.mask[r:r + self.window, c:c + self.window] = True

    def observation(self) -> np.ndarray:
        img = self.dataset.images[self.index]
        return np.where(self.mask, img, 0.0)[None]

    def reset(self, index: int) -> np.ndarray:
        if not 0 <= index < len(self.dataset):
            raise IndexError(f"image index {index} out of range")
        H, W = self.dataset.shape
        self.index = int(index)
        self.pos = ((H - self.window) // 2, (W - self.window) // 2)
        self.steps = 0
        self.done = False
        self.mask[:] = False
        self._reveal()
        return self.observation()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise RuntimeError("episode is finished; call reset()")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")
        H, W = self.dataset.shape
        reward = 0.0
        if action < N_MOVES:
            dr, dc = MOVES[action]
            r = min(max(self.pos[0] + dr * self.move, 0), H - self.window)
            c = min(max(self.pos[1] + dc * self.move, 0), W - self.window)
            self.pos = (r, c)
            self._reveal()
        elif action - N_MOVES == self.dataset.labels[self.index]:
            reward = 1.0
            self.done = True
        self.steps += 1
        if self.steps >= self.t_max:
            self.done = True
        return self.observation(), reward, self.done
