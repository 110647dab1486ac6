import numpy as np


def log1p_transform(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("log1p_transform expects non-negative grams")
    return np.log1p(y)


def expm1_inverse(z):
    return np.expm1(np.asarray(z, dtype=np.float64))
