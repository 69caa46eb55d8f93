"""Built-in example matrices, runnable by name from the CLI."""

import numpy as np

__all__ = ["FIXTURES", "get_fixture", "fixture_names"]


def _separable_rank3():
    # 10x8 separable product: the first three columns of the right factor
    # form an identity block, so three data columns are pure.
    W = np.array([
        [5, 5, 5, 5, 9, 1, 4, 1, 7, 7],
        [10, 6, 5, 3, 7, 8, 4, 1, 5, 8],
        [8, 9, 9, 4, 7, 8, 3, 9, 6, 7],
    ], dtype=float).T
    H = np.array([
        [1, 0, 0, 2, 3, 6, 4, 4],
        [0, 1, 0, 5, 7, 7, 7, 4],
        [0, 0, 1, 9, 4, 4, 8, 6],
    ], dtype=float)
    return W @ H


def _nested_squares():
    return np.array([
        [5, 3, 3, 5],
        [3, 5, 5, 3],
        [5, 5, 3, 3],
        [3, 3, 5, 5],
    ], dtype=float)


def _noisy():
    # Sparse matrix with one small positive perturbation; the strict
    # preprocessing leaves it untouched, the relaxed one sparsifies it.
    return np.array([
        [0.0, 0.01],
        [1.0, 0.0],
        [1.0, 1.0],
    ])


def _sparsity_example():
    return np.array([
        [0, 1, 1],
        [0, 0, 1],
        [1, 0, 0],
        [1, 1, 0],
    ], dtype=float)


def _ones_minus_identity():
    return np.ones((3, 3)) - np.eye(3)


def _continuum():
    # Preprocessing this matrix yields an instance whose minimal nested
    # polygons form a continuum rather than a finite list.
    return np.array([
        [0.00, 0.5, 0.25, 0.0],
        [1.00, 0.5, 0.75, 1.0],
        [1.00, 0.0, 0.10, 0.5],
        [0.00, 1.0, 0.90, 0.5],
    ])


FIXTURES = {
    "sepex": _separable_rank3,
    "nested-squares": _nested_squares,
    "noisy": _noisy,
    "sparsity-example": _sparsity_example,
    "ones-minus-identity": _ones_minus_identity,
    "counter-example": _continuum,
}


def fixture_names():
    return sorted(FIXTURES)


def get_fixture(name):
    try:
        return FIXTURES[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; available: "
                       f"{', '.join(fixture_names())}") from None
