"""Named coordinate maps for the explicit PARITY weights."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import BuildError

# Positional coordinates shared by every construction, with the feature that fills them.
PE_NAMES = ("ln_i", "i_pow10", "inv_i", "inv_i2", "tau_i", "abs_tau_A", "even", "odd")


def pe_feature(name: str, alpha=None, M: int | None = None) -> dict:
    if name == "ln_i":
        return {"kind": "log"}
    if name == "i_pow10":
        return {"kind": "power", "exponent": 10}
    if name == "inv_i":
        return {"kind": "power", "exponent": -1}
    if name == "inv_i2":
        return {"kind": "power", "exponent": -2}
    if name == "tau_i":
        return {"kind": "tau"}
    if name == "abs_tau_A":
        return {"kind": "abs_tau_A", "alpha": float(alpha)}
    if name == "even":
        return {"kind": "residue", "modulus": 2, "residue": 0}
    if name == "odd":
        return {"kind": "residue", "modulus": 2, "residue": 1}
    if name.startswith("res_"):
        return {"kind": "residue", "modulus": M, "residue": int(name[4:])}
    if name.startswith("start_"):
        return {"kind": "equals", "position": int(name[6:]) + 1}
    raise KeyError(name)


@dataclass(frozen=True)
class CoordinateLayout:
    """Disjoint named coordinates plus the total model dimension ``d``.

    ``d`` may exceed ``len(names)``: the extra coordinates are spare width
    used only as hidden units of the final feed-forward layer.
    """

    names: tuple
    d: int
    positional: tuple = ()  # names filled by the positional encoding
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise BuildError("coordinate names must be unique")
        if self.d < len(self.names):
            raise BuildError(f"d={self.d} is smaller than the {len(self.names)} named coordinates")
        object.__setattr__(self, "index", {name: k for k, name in enumerate(self.names)})

    def __getitem__(self, name: str) -> int:
        return self.index[name]

    def __contains__(self, name) -> bool:
        return name in self.index

    @property
    def spare(self) -> int:
        return self.d - len(self.names)

    def table(self) -> str:
        rows = [f"{k:>4}  {name}{'  (PE)' if name in self.positional else ''}" for k, name in enumerate(self.names)]
        if self.spare:
            rows.append(f"{len(self.names):>4}..{self.d - 1}  spare")
        return "\n".join(rows)

    @classmethod
    def restricted(cls) -> CoordinateLayout:
        names = ("bit",) + PE_NAMES + ("gamma", "Gamma", "z")
        return cls(names, len(names), PE_NAMES)

    @classmethod
    def full(cls, M: int, d: int | None = None) -> CoordinateLayout:
        res = tuple(f"res_{r}" for r in range(M))
        start = tuple(f"start_{r}" for r in range(M))
        work = tuple(f"{w}_{r}" for r in range(M) for w in ("x", "gamma", "Gamma", "z"))
        names = ("bit",) + res + start + PE_NAMES + work + ("score", "unit")
        needed = max(len(names), 2 ** (M - 1))
        if d is None:
            d = needed
        elif d < needed:
            raise BuildError(
                f"d={d} too small: layout needs {len(names)} coordinates and the readout {2 ** (M - 1)} hidden units"
            )
        return cls(names, d, res + start + PE_NAMES)

    def positional_spec(self, alpha=None, M=None) -> tuple:
        return tuple((self[name], pe_feature(name, alpha, M)) for name in self.positional)
