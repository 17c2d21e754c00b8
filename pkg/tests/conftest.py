import numpy as np
import pytest

from patchcontrast.corpus import CorpusConfig, generate_synthetic_corpus, split_by_section


@pytest.fixture(scope="session")
def small_corpus():
    """Coarse-resolution corpus so full-range translation fits a 96px store."""
    config = CorpusConfig(
        classes=3,
        patches_per_class=30,
        side=96,
        brains=2,
        sections_per_brain=3,
        seed=5,
        resolution_um=8.0,
    )
    return generate_synthetic_corpus(config)


@pytest.fixture(scope="session")
def small_split(small_corpus):
    return split_by_section(small_corpus.manifest, 0.7, seed=1)


def nearest_centroid_accuracy(corpus) -> float:
    """Independent raw-pixel oracle: classify by closest class mean."""
    x = np.stack([corpus.patch_pixels(i).ravel() for i in range(len(corpus))])
    y = corpus.labels()
    centroids = np.stack([x[y == c].mean(axis=0) for c in range(corpus.manifest.class_count)])
    distances = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float((distances.argmin(axis=1) == y).mean())
