"""Kernel backend selection.

Imports the compiled extension when available, otherwise the NumPy
fallback. Set SFSHYBRID_PURE=1 to force the fallback (used by the
benchmark and the cross-backend tests).
"""

import os

if os.environ.get("SFSHYBRID_PURE"):
    from . import pure as _impl
else:
    try:
        from . import _native as _impl
    except ImportError:
        from . import pure as _impl

BACKEND_NAME = _impl.BACKEND_NAME

albedo_correct = _impl.albedo_correct
project_image = _impl.project_image
field_dot = _impl.field_dot
specular_lobe = _impl.specular_lobe
minmax_scale = _impl.minmax_scale
convex_mix = _impl.convex_mix
sum_sq_err = _impl.sum_sq_err
scaled_outer = _impl.scaled_outer
add_renorm_rows = _impl.add_renorm_rows
lambda_apply = _impl.lambda_apply
combine_renorm = _impl.combine_renorm
