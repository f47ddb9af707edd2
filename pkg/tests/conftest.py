import numpy as np
import pytest

from momentot.polyalg import SemialgebraicSet
from momentot.moments import UniformMask, descriptor_moments


def smiley_mask(n=40, cx=0.32, cy=0.30, rad=0.16):
    """Non-convex test shape: disk minus two eyes and a mouth arc."""
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    x = (ii + 0.5) / n
    y = (jj + 0.5) / n
    face = (x - cx) ** 2 + (y - cy) ** 2 <= rad ** 2
    eye1 = (x - (cx - 0.06)) ** 2 + (y - (cy + 0.05)) ** 2 <= 0.035 ** 2
    eye2 = (x - (cx + 0.06)) ** 2 + (y - (cy + 0.05)) ** 2 <= 0.035 ** 2
    mouth = ((x - cx) ** 2 + (y - (cy - 0.02)) ** 2 <= 0.1 ** 2) & (y < cy - 0.045)
    return face & ~eye1 & ~eye2 & ~mouth


def translate_mask(mask, di, dj):
    out = np.zeros_like(mask)
    src = mask[:mask.shape[0] - di, :mask.shape[1] - dj]
    out[di:, dj:] = src
    return out


def sample_shape(n, rng):
    """Point cloud on an arc plus two blobs, inside [0,1]^2."""
    pts = []
    n1 = n // 3
    th = rng.uniform(np.pi, 2 * np.pi, n1)
    pts.append(np.c_[0.5 + 0.22 * np.cos(th), 0.45 + 0.22 * np.sin(th)])
    n2 = (n - n1) // 2
    pts.append(rng.normal([0.38, 0.62], 0.03, (n2, 2)))
    pts.append(rng.normal([0.62, 0.62], 0.03, (n - n1 - n2, 2)))
    return np.vstack(pts)


@pytest.fixture(scope="session")
def unit_box_2d():
    return SemialgebraicSet.box([0.0, 0.0], [1.0, 1.0])


@pytest.fixture(scope="session")
def unit_box_1d():
    return SemialgebraicSet.box([0.0], [1.0])


@pytest.fixture(scope="session")
def mask_pair(unit_box_2d):
    """Smiley mask and its exact translate by T = (0.1, 0.2) with moments."""
    m1 = smiley_mask()
    m2 = translate_mask(m1, 4, 8)          # 4 and 8 cells of 1/40
    mu = descriptor_moments(UniformMask(m1), unit_box_2d, 8)
    nu = descriptor_moments(UniformMask(m2), unit_box_2d, 8)
    return m1, m2, mu, nu
