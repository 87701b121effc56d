"""Helpers shared by the experiment scripts."""
import numpy as np


def top_pair(slog):
    """The two most-searched inside products."""
    cnt = (slog.search_rank()[:, 1:] >= 0).sum(0)
    return tuple(sorted(int(k) + 1 for k in np.argsort(-cnt, kind="stable")[:2]))
