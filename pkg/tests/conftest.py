import numpy as np
import pytest

import teesplit as ts


def smooth_images(n, shape, seed, block=4):
    """Piecewise-constant random images in [0, 1].

    Coarse random grids upsampled by nearest neighbor. Smooth targets keep
    inversion attacks well conditioned at small step counts, which keeps
    the privacy tests fast without changing what they measure.
    """
    c, h, w = shape
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        coarse = rng.uniform(0.0, 1.0, size=(c, max(1, h // block), max(1, w // block)))
        img = np.repeat(np.repeat(coarse, block, axis=1), block, axis=2)
        img = img[:, :h, :w]
        if img.shape != (c, h, w):
            pad = [(0, 0), (0, h - img.shape[1]), (0, w - img.shape[2])]
            img = np.pad(img, pad, mode="edge")
        out.append(np.ascontiguousarray(np.clip(img, 0.0, 1.0)))
    return out


@pytest.fixture(autouse=True)
def _fresh_weights():
    # weight cache is keyed by structure and seed only; clearing between
    # tests keeps memory bounded when many model variants are built
    yield
    ts.clear_weight_cache()


@pytest.fixture
def toy4():
    return ts.build_toy_cnn(points=4, input_shape=(1, 16, 16), seed=5)
