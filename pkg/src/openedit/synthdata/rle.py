"""Run-length coding for boolean masks, row-major, starting with a zero-run."""

import numpy as np


def rle_encode(mask: np.ndarray) -> dict:
    """Encode a 2-D boolean mask as {"size": [H, W], "counts": [...]}.

    counts alternate run lengths of 0s and 1s over the flattened mask and
    always start with the zero-run (possibly of length 0).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    flat = mask.reshape(-1)
    counts = []
    if flat.size:
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(bounds).tolist()
        if flat[0]:
            counts.append(0)
        counts.extend(runs)
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": counts}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in rle["counts"]:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    if pos != h * w:
        raise ValueError(f"rle counts sum to {pos}, expected {h * w}")
    return flat.reshape(h, w)
