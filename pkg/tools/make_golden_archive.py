#!/usr/bin/env python3
"""Regenerate the checked-in golden archive used by the serialization tests.

The archive pins the on-disk byte layout (little-endian, 64-byte aligned
payload); the test reconstructs the same model from the same seed and
requires bit equality, so any format drift shows up as a diff.
"""

from pathlib import Path

import numpy as np

from conv2attn import ConvKernel, conv_to_mhsa
from conv2attn.model_io import save

GOLDEN_SEED = 20240901
GOLDEN_PATH = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden.c2a"


def golden_model():
    rng = np.random.default_rng(GOLDEN_SEED)
    kernel = ConvKernel(weights=rng.normal(size=(3, 3, 1, 2)).astype(np.float32))
    return conv_to_mhsa(kernel, 2, bias_scale=40.0, boundary="phantom")


if __name__ == "__main__":
    GOLDEN_PATH.parent.mkdir(parents=True, exist_ok=True)
    save(golden_model(), GOLDEN_PATH)
    print(f"wrote {GOLDEN_PATH} ({GOLDEN_PATH.stat().st_size} bytes)")
