"""Shared fixtures: tiny rating files and the optional MovieLens-100K path.

The MovieLens-dependent tests look for the real ``u.data`` file via the
``DEBIAS_MF_ML100K`` environment variable (pointing at the file itself or
at the ml-100k directory) and skip with an explanation when it is absent.
"""

import os

import numpy as np
import pytest

from debias_mf.data import RatingDataset


def ml100k_path():
    candidate = os.environ.get("DEBIAS_MF_ML100K", "")
    if not candidate:
        return None
    if os.path.isdir(candidate):
        candidate = os.path.join(candidate, "u.data")
    return candidate if os.path.isfile(candidate) else None


requires_ml100k = pytest.mark.skipif(
    ml100k_path() is None,
    reason="MovieLens-100K not available; set DEBIAS_MF_ML100K to run")


@pytest.fixture
def tiny_ml100k(tmp_path):
    """A 4-user, 3-item file in the tab-separated MovieLens layout."""
    lines = [
        "1\t10\t4\t874965758",
        "1\t20\t3\t876893171",
        "2\t10\t5\t878542960",
        "2\t30\t2\t876893119",
        "3\t20\t4\t889751712",
        "3\t30\t1\t875071561",
        "4\t10\t3\t875072484",
        "4\t20\t5\t875071805",
        "4\t30\t4\t874965706",
    ]
    path = tmp_path / "u.data"
    path.write_text("\n".join(lines) + "\n")
    return path


def random_dataset(m, n, density, seed, ensure_coverage=True):
    """Random dense-ish dataset; optionally forces one triple per row/column."""
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < density
    if ensure_coverage:
        for i in range(m):
            if not mask[i].any():
                mask[i, rng.integers(n)] = True
        for j in range(n):
            if not mask[:, j].any():
                mask[rng.integers(m), j] = True
    users, items = np.nonzero(mask)
    ratings = rng.uniform(1.0, 5.0, size=len(users))
    return RatingDataset(num_users=m, num_items=n, users=users, items=items,
                         ratings=ratings)
