"""Optional numba acceleration.

Kernels are written once as plain Python over numpy scalars and arrays and
decorated with :func:`njit`.  Setting ``FKPDE_NO_NUMBA=1`` before import turns
the decorator into a no-op so the same code runs as pure Python (slow, but
handy for debugging and for checking the compiled path against the
interpreted one).

On-disk caching is opt-in (``njit(cache=True)``) and reserved for leaf
kernels: numba cannot reliably pickle signatures that carry function-typed
arguments, so kernels taking coefficient callables compile per process.
"""
import os

USE_NUMBA = os.environ.get("FKPDE_NO_NUMBA", "0").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:

    def njit(*args, **kwargs):
        kwargs.setdefault("nogil", True)
        if args and callable(args[0]):
            return numba.njit(**kwargs)(args[0])
        return numba.njit(*args, **kwargs)

    def jit_user(fn):
        """Compile a user callable unless it is already a numba dispatcher."""
        if isinstance(fn, numba.core.dispatcher.Dispatcher):
            return fn
        return numba.njit(nogil=True)(fn)

else:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

    def jit_user(fn):
        return fn
