"""Structure model: a polynomial frame on a box with a volume density."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import NotBracketGenerating, ValidationError
from .expr import Expr
from .rng import stream
from .vf import VectorField


@dataclass(frozen=True)
class Stratum:
    """A parametrized k-dimensional piece of the singular set.

    map is a polynomial embedding of the parameter box into the ambient
    space; coordinates x1..xk inside map refer to stratum parameters.
    """

    name: str
    k: int
    map: tuple[Expr, ...]
    parambox: tuple[tuple[Fraction, Fraction], ...]

    @property
    def dim(self) -> int:
        return len(self.map)

    def point(self, params) -> tuple[Fraction, ...]:
        """Exact ambient point for rational parameters."""
        vals = [Fraction(t) for t in params]
        return tuple(c.eval(vals) for c in self.map)

    def points(self, params: np.ndarray) -> np.ndarray:
        """Ambient points for a (..., k) float array of parameters."""
        params = np.asarray(params, dtype=float)
        out = np.empty(params.shape[:-1] + (self.dim,))
        for j, c in enumerate(self.map):
            out[..., j] = c.eval_batch(params)
        return out

    def jacobian_at(self, params) -> list[list[Fraction]]:
        """dim x k Jacobian of the embedding at rational parameters."""
        vals = [Fraction(t) for t in params]
        return [[self.map[r].diff(c + 1).eval(vals) for c in range(self.k)]
                for r in range(self.dim)]

    def sample(self, count: int, seed: int, *tags) -> np.ndarray:
        rng = stream(seed, "stratum", self.name, *tags)
        lo = np.array([float(a) for a, _ in self.parambox])
        hi = np.array([float(b) for _, b in self.parambox])
        return lo + (hi - lo) * rng.random((count, self.k))


@dataclass(frozen=True)
class SRStructure:
    """Ambient dimension, generating fields, volume density, working box."""

    name: str
    dim: int
    field_names: tuple[str, ...]
    fields: tuple[VectorField, ...]
    volume: Expr
    box: tuple[tuple[Fraction, Fraction], ...]
    probe: tuple[Fraction, ...] | None = None
    strata: tuple["Stratum", ...] = field(default=())

    @property
    def m(self) -> int:
        return len(self.fields)

    def box_center(self) -> tuple[Fraction, ...]:
        return tuple((a + b) / 2 for a, b in self.box)

    def box_lo(self) -> np.ndarray:
        return np.array([float(a) for a, _ in self.box])

    def box_hi(self) -> np.ndarray:
        return np.array([float(b) for _, b in self.box])

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.box_lo()) & (x <= self.box_hi()), axis=-1)

    def sample_box(self, count: int, seed: int, *tags) -> np.ndarray:
        rng = stream(seed, "box", self.name, *tags)
        lo, hi = self.box_lo(), self.box_hi()
        return lo + (hi - lo) * rng.random((count, self.dim))

    def volume_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.volume.eval_batch(x) + np.zeros(x.shape[:-1])

    def validate(self, seed: int = 0, samples: int = 256) -> None:
        """Check the declared data is usable.

        The density must not vanish anywhere on the box (checked on a random
        sample plus the box corners up to dim 4), and the frame must be
        bracket-generating at the probe point.
        """
        if len(self.field_names) != len(set(self.field_names)):
            raise ValidationError(f"{self.name}: duplicate field names")
        for vf in self.fields:
            if vf.is_zero:
                raise ValidationError(f"{self.name}: zero vector field in frame")

        pts = [self.sample_box(samples, seed, "validate")]
        if self.dim <= 4:
            corners = np.array(
                np.meshgrid(*[[float(a), float(b)] for a, b in self.box],
                            indexing="ij")).reshape(self.dim, -1).T
            pts.append(corners)
        pts.append(np.array([[float(c) for c in self.box_center()]]))
        allpts = np.concatenate(pts, axis=0)
        dens = self.volume_at(allpts)
        if np.any(np.abs(dens) < 1e-12):
            bad = allpts[np.argmin(np.abs(dens))]
            raise ValidationError(
                f"{self.name}: volume density vanishes near {bad.tolist()}")
        if np.any(dens < 0) and np.any(dens > 0):
            raise ValidationError(f"{self.name}: volume density changes sign")

        probe = self.probe if self.probe is not None else self.box_center()
        from .flag import flag_at  # local import breaks the module cycle

        fl = flag_at(self, probe)
        if fl.growth[-1] != self.dim:
            raise NotBracketGenerating(tuple(float(c) for c in probe),
                                       fl.growth, fl.depth_cap)

        for st in self.strata:
            if len(st.map) != self.dim:
                raise ValidationError(
                    f"{self.name}: stratum {st.name} maps into dimension "
                    f"{len(st.map)}, ambient is {self.dim}")

    def stratum(self, name: str) -> Stratum:
        for st in self.strata:
            if st.name == name:
                return st
        raise KeyError(f"no stratum named {name!r} in {self.name}")


_BUILTIN_CACHE: dict[str, SRStructure] = {}


def load_builtin(name: str) -> SRStructure:
    """Load a packaged structure file by bare name, e.g. 'grushin'."""
    if name not in _BUILTIN_CACHE:
        from importlib import resources

        from .parser import parse_structure

        ref = resources.files("srm.data").joinpath(f"{name}.srm")
        try:
            text = ref.read_text()
        except FileNotFoundError:
            raise KeyError(f"no builtin structure named {name!r}") from None
        structure = parse_structure(text, name=name)
        structure.validate()
        _BUILTIN_CACHE[name] = structure
    return _BUILTIN_CACHE[name]


def builtin_names() -> tuple[str, ...]:
    from importlib import resources

    out = []
    for entry in resources.files("srm.data").iterdir():
        if entry.name.endswith(".srm"):
            out.append(entry.name[:-4])
    return tuple(sorted(out))
