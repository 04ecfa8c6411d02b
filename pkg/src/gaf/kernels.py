"""Kernel backend selection.

The convolution inner loops exist twice: a compiled extension (gaf._conv)
and a numpy fallback (gaf._np_conv) with the same call contract. The
extension is preferred when it imported cleanly; set GAF_NO_EXT=1 to force
the fallback. Both backends agree to floating-point roundoff (their
accumulation orders differ, so equality is near-exact, not bitwise).
"""

import os

if os.environ.get("GAF_NO_EXT"):
    from gaf import _np_conv as _impl

    BACKEND = "numpy"
else:
    try:
        from gaf import _conv as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from gaf import _np_conv as _impl

        BACKEND = "numpy"

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
