import numpy as np


def geman_mcclure(x, sigma):
    """sigma^2 x^2 / (sigma^2 + x^2): even, smooth, saturates at sigma^2."""
    if sigma <= 0:
        raise ValueError(f'sigma must be positive, got {sigma}')
    x2 = np.square(x)
    s2 = sigma * sigma
    return s2 * x2 / (s2 + x2)


def gm_sq(x2, sigma):
    """Geman-McClure on an already squared argument (numpy or torch)."""
    s2 = sigma * sigma
    return s2 * x2 / (s2 + x2)
