"""Backend selection for the hot loops.

The compiled extension is used when importable; setting ``CSLID_PURE=1``
forces the numpy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("CSLID_PURE", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_backward = _impl.lstm_seq_backward
ctc_loss_grad = _impl.ctc_loss_grad
edit_counts = _impl.edit_counts


def compiled():
    """The compiled module, or None if it is not built."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels
