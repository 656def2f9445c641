"""Batch kernels with a compiled core and a pure-numpy fallback.

At import time the compiled Cython extension is preferred; if it is missing
(source install without a compiler) or PROTOGZSL_PURE_PYTHON=1 is set, the
numpy implementations are used instead. ``BACKEND`` records the choice.
"""

import os

if os.environ.get("PROTOGZSL_PURE_PYTHON"):
    from ._pykern import (entropy_rows, entropy_rows_grad,
                          softmax_backward_rows, softmax_rows)

    BACKEND = "python"
else:
    try:
        from ._ckern import (entropy_rows, entropy_rows_grad,
                             softmax_backward_rows, softmax_rows)

        BACKEND = "cython"
    except ImportError:
        from ._pykern import (entropy_rows, entropy_rows_grad,
                              softmax_backward_rows, softmax_rows)

        BACKEND = "python"

__all__ = [
    "BACKEND",
    "softmax_rows",
    "softmax_backward_rows",
    "entropy_rows",
    "entropy_rows_grad",
]
