"""Small helpers shared by the demo scripts."""

import os

import numpy as np


def write_pgm(path: str, pixels: np.ndarray) -> None:
    """Save a [0,1] grayscale image as a binary PGM (viewable almost anywhere)."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def banner(text: str) -> None:
    print(f"\n=== {text} ===")
