"""Disentangled shape/pose latents with retrieval-based rotation estimation.

Set POSELATENT_THREADS before the first numpy import to cap BLAS worker
threads; every reduction is a single numpy call, so results are reproducible
for a fixed thread count.
"""
import os as _os

if "POSELATENT_THREADS" in _os.environ:
    _n = _os.environ["POSELATENT_THREADS"]
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _n)

__version__ = "0.1.0"
