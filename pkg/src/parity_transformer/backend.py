"""Real-number backends.

Every numeric routine in the package is written against :class:`Backend`, so
the same code runs in IEEE double, in hardware extended precision (x87 long
double, 64-bit mantissa) or in software floating point with an arbitrary
mantissa width (mpmath object arrays).
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from fractions import Fraction

import mpmath
import numpy as np

from .errors import InvalidInputError

_LONGDOUBLE_BITS = np.finfo(np.longdouble).nmant + 1


@dataclass(frozen=True)
class PrecisionConfig:
    """Either ``double`` or ``extended`` with a mantissa width of at least 53 bits."""

    mode: str = "double"
    mantissa_bits: int | None = None

    def __post_init__(self):
        if self.mode == "double":
            if self.mantissa_bits not in (None, 53):
                raise InvalidInputError("double precision has a fixed 53-bit mantissa")
            object.__setattr__(self, "mantissa_bits", None)
        elif self.mode == "extended":
            if not isinstance(self.mantissa_bits, int) or self.mantissa_bits < 53:
                raise InvalidInputError(
                    f"extended precision needs mantissa_bits >= 53, got {self.mantissa_bits!r}"
                )
        else:
            raise InvalidInputError(f"unknown precision mode {self.mode!r}")

    @classmethod
    def parse(cls, text: str | PrecisionConfig) -> PrecisionConfig:
        if isinstance(text, PrecisionConfig):
            return text
        text = str(text).strip().lower()
        if text in ("double", "float64", "binary64"):
            return cls()
        m = re.fullmatch(r"(?:ext|extended)[:(]?\s*(\d+)\)?", text)
        if m is None:
            raise InvalidInputError(f"cannot parse precision {text!r}; use 'double' or 'ext:<bits>'")
        return cls("extended", int(m.group(1)))

    @classmethod
    def extended(cls, bits: int = _LONGDOUBLE_BITS) -> PrecisionConfig:
        return cls("extended", bits)

    @property
    def bits(self) -> int:
        return 53 if self.mode == "double" else self.mantissa_bits

    @property
    def backend(self) -> Backend:
        return get_backend(self)

    def __str__(self):
        return "double" if self.mode == "double" else f"ext:{self.mantissa_bits}"


DOUBLE = PrecisionConfig()


class Backend:
    """Array operations in one fixed precision."""

    name: str
    dtype: object

    def asarray(self, x):
        raise NotImplementedError

    def const(self, x):
        """Convert an int, float, Fraction or decimal string to a backend scalar."""
        raise NotImplementedError

    def exp(self, x):
        raise NotImplementedError

    def log(self, x):
        raise NotImplementedError

    def sqrt(self, x):
        raise NotImplementedError

    def isfinite(self, x):
        raise NotImplementedError

    def fsum(self, x, axis=-1):
        return np.sum(x, axis=axis)

    def zeros(self, shape):
        return self.asarray(np.zeros(shape))

    def arange(self, start, stop):
        return self.asarray(np.arange(start, stop))

    def all_finite(self, x) -> bool:
        return bool(np.all(self.isfinite(x)))

    def to_float(self, x):
        return np.asarray(x, dtype=np.float64)

    def __repr__(self):
        return f"<Backend {self.name}>"


class NumpyBackend(Backend):
    def __init__(self, dtype, name):
        self.dtype = np.dtype(dtype)
        self.name = name

    def asarray(self, x):
        return np.asarray(x, dtype=self.dtype)

    def const(self, x):
        if isinstance(x, Fraction):
            return self.dtype.type(x.numerator) / self.dtype.type(x.denominator)
        if isinstance(x, str):
            return self.const(Fraction(x))
        return self.dtype.type(x)

    def exp(self, x):
        return np.exp(x)

    def log(self, x):
        return np.log(x)

    def sqrt(self, x):
        return np.sqrt(x)

    def isfinite(self, x):
        return np.isfinite(x)


class MpmathBackend(Backend):
    """Object arrays of mpf numbers bound to a private context of fixed precision."""

    def __init__(self, bits: int):
        self.ctx = mpmath.MPContext()
        self.ctx.prec = bits
        self.dtype = np.dtype(object)
        self.name = f"mpmath:{bits}"
        self._mpf = np.frompyfunc(self._scalar, 1, 1)
        self._exp = np.frompyfunc(self.ctx.exp, 1, 1)
        self._log = np.frompyfunc(self.ctx.log, 1, 1)
        self._sqrt = np.frompyfunc(self.ctx.sqrt, 1, 1)
        self._finite = np.frompyfunc(self.ctx.isfinite, 1, 1)
        self._float = np.frompyfunc(float, 1, 1)

    def _scalar(self, x):
        if isinstance(x, Fraction):
            return self.ctx.mpf(x.numerator) / x.denominator
        if isinstance(x, (np.floating, np.integer)):
            x = x.item() if x.dtype != np.longdouble else self.ctx.mpf(repr(x))
        return self.ctx.mpf(x)

    def asarray(self, x):
        arr = np.asarray(x, dtype=object)
        return self._mpf(arr).astype(object) if arr.ndim else np.asarray(self._scalar(arr.item()), dtype=object)

    def const(self, x):
        if isinstance(x, str):
            return self._scalar(Fraction(x))
        return self._scalar(x)

    def exp(self, x):
        return self._exp(x)

    def log(self, x):
        return self._log(x)

    def sqrt(self, x):
        return self._sqrt(x)

    def isfinite(self, x):
        return np.asarray(self._finite(x), dtype=bool)

    def fsum(self, x, axis=-1):
        x = np.asarray(x, dtype=object)
        if x.ndim == 0:
            return x.item()
        return np.apply_along_axis(self.ctx.fsum, axis, x) if x.ndim > 1 else self.ctx.fsum(x)

    def to_float(self, x):
        return np.asarray(self._float(np.asarray(x, dtype=object)), dtype=np.float64)


@functools.lru_cache(maxsize=None)
def get_backend(config: PrecisionConfig) -> Backend:
    if config.mode == "double":
        return NumpyBackend(np.float64, "float64")
    if config.mantissa_bits == _LONGDOUBLE_BITS and _LONGDOUBLE_BITS > 53:
        return NumpyBackend(np.longdouble, f"longdouble:{_LONGDOUBLE_BITS}")
    return MpmathBackend(config.mantissa_bits)


def resolve(precision) -> Backend:
    """Accept a PrecisionConfig, a precision string, a Backend or None (double)."""
    if precision is None:
        return get_backend(DOUBLE)
    if isinstance(precision, Backend):
        return precision
    return get_backend(PrecisionConfig.parse(precision))
