import numpy as np
import pytest

from coparse.core import ImageRecord


def make_image(spmap, pixels=None, contour=None, gt=None, tags=(0,), image_id="test"):
    """ImageRecord from a superpixel map, other rasters defaulted."""
    spmap = np.asarray(spmap, dtype=np.int64)
    h, w = spmap.shape
    if pixels is None:
        pixels = np.full((h, w, 3), 128, dtype=np.uint8)
    if contour is None:
        contour = np.zeros((h, w), dtype=bool)
    return ImageRecord(
        id=image_id,
        pixels=np.asarray(pixels, dtype=np.uint8),
        tags=frozenset(tags),
        superpixel_map=spmap,
        contour_map=np.asarray(contour, dtype=bool),
        ground_truth=None if gt is None else np.asarray(gt, dtype=np.int64),
    )


@pytest.fixture
def quad_image():
    """4 equal quadrant superpixels on a 4x4 canvas."""
    spmap = np.zeros((4, 4), dtype=np.int64)
    spmap[:2, 2:] = 1
    spmap[2:, :2] = 2
    spmap[2:, 2:] = 3
    return make_image(spmap)
