import numpy as np

from cldp import GrayImage


def gray(values) -> GrayImage:
    return GrayImage(np.asarray(values, dtype=np.float64))


def random_8bit(rng, h: int, w: int) -> np.ndarray:
    return np.floor(rng.uniform(0.0, 256.0, size=(h, w)))
