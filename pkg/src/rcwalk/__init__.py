"""Biased random walks among iid random conductances on Z^d."""

import os

# the TBB found on many systems is too old for numba; fall back quietly
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
if "RCWALK_THREADS" in os.environ:
    os.environ.setdefault("NUMBA_NUM_THREADS", os.environ["RCWALK_THREADS"])

__version__ = "0.1.0"
