"""Hot alignment kernel with compiled/pure-Python backend selection.

The Cython extension is preferred when built; the numpy fallback computes
the identical recursion. ``BACKEND`` records which one is active.
"""

from . import viterbi_np

try:  # pragma: no cover - depends on build environment
    from . import _viterbi_cy

    viterbi_path = _viterbi_cy.viterbi_path
    BACKEND = "cython"
except ImportError:  # pragma: no cover
    _viterbi_cy = None
    viterbi_path = viterbi_np.viterbi_path
    BACKEND = "numpy"

__all__ = ["viterbi_path", "viterbi_np", "BACKEND"]
