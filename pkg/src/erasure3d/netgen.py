"""Random network instances in an n^lambda x n^mu x n^nu cuboid."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

EXPONENT_TOL = 1e-12


class DensityMode(str, Enum):
    EXTENDED = "extended"
    DENSE = "dense"


@dataclass(frozen=True)
class NetworkConfig:
    n: int
    lam: float = 1 / 3
    mu: float = 1 / 3
    nu: float = 1 / 3
    density_mode: DensityMode = DensityMode.EXTENDED
    seed: int = 0
    allow_flat: bool = False

    def __post_init__(self):
        object.__setattr__(self, "density_mode", DensityMode(self.density_mode))
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        exps = (self.lam, self.mu, self.nu)
        if abs(sum(exps) - 1.0) > EXPONENT_TOL:
            raise ValueError(f"exponents must sum to 1, got {sum(exps)!r}")
        if any(e < 0 for e in exps):
            raise ValueError("exponents must be nonnegative")
        if any(e == 0 for e in exps):
            if not self.allow_flat:
                raise ValueError("a zero exponent needs allow_flat=True")
            warnings.warn("flat configuration: one side does not scale with n", stacklevel=3)

    @property
    def exponents(self) -> tuple[float, float, float]:
        return (self.lam, self.mu, self.nu)

    @property
    def is_flat(self) -> bool:
        return any(e == 0 for e in self.exponents)

    @property
    def extended_sides(self) -> np.ndarray:
        """Side lengths of the unit-density cuboid."""
        return np.array([self.n ** e for e in self.exponents], dtype=float)

    @property
    def distance_scale(self) -> float:
        """Factor turning stored coordinates into effective (unit-density) ones."""
        if self.density_mode is DensityMode.DENSE:
            return self.n ** (1 / 3)
        return 1.0

    @property
    def sides(self) -> np.ndarray:
        """Side lengths of the cuboid the coordinates live in."""
        return self.extended_sides / self.distance_scale


@dataclass(frozen=True)
class NetworkInstance:
    config: NetworkConfig
    positions: np.ndarray
    pairing: np.ndarray
    _effective: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        pairing = np.asarray(self.pairing, dtype=np.int64)
        n = self.config.n
        if pos.shape != (n, 3) or pairing.shape != (n,):
            raise ValueError("positions must be (n, 3) and pairing (n,)")
        if not np.array_equal(np.sort(pairing), np.arange(n)):
            raise ValueError("pairing must be a permutation of node indices")
        pos.setflags(write=False)
        pairing.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "pairing", pairing)
        eff = pos * self.config.distance_scale
        eff.setflags(write=False)
        object.__setattr__(self, "_effective", eff)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def effective_positions(self) -> np.ndarray:
        """Coordinates in the unit-density frame used by every distance computation."""
        return self._effective

    @property
    def effective_sides(self) -> np.ndarray:
        return self.config.extended_sides

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "n": cfg.n,
            "lambda": cfg.lam,
            "mu": cfg.mu,
            "nu": cfg.nu,
            "mode": cfg.density_mode.value,
            "seed": cfg.seed,
            "positions": self.positions.tolist(),
            "pairing": self.pairing.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> NetworkInstance:
        exps = (data["lambda"], data["mu"], data["nu"])
        cfg = NetworkConfig(
            n=data["n"],
            lam=exps[0],
            mu=exps[1],
            nu=exps[2],
            density_mode=data["mode"],
            seed=data["seed"],
            allow_flat=any(e == 0 for e in exps),
        )
        return cls(cfg, np.array(data["positions"], dtype=float), np.array(data["pairing"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> NetworkInstance:
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate(config: NetworkConfig) -> NetworkInstance:
    """Place n nodes i.i.d. uniformly and draw a uniform random pairing.

    Dense and extended instances built from the same seed share the same
    uniform draws, so their effective geometry coincides.
    """
    rng = np.random.default_rng(config.seed)
    unit = rng.random((config.n, 3))
    pairing = rng.permutation(config.n)
    return NetworkInstance(config, unit * config.sides, pairing)


def distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def effective_distance(d: float, config: NetworkConfig) -> float:
    """Rescale a raw distance into the unit-density frame (identity when extended)."""
    if d < 0:
        raise ValueError("distance must be nonnegative")
    if config.density_mode is DensityMode.DENSE:
        return d * config.n ** (1 / 3)
    return d


def unit_cube_counts(instance: NetworkInstance) -> np.ndarray:
    """Node count per unit cube of the effective cuboid (partial cubes at the far faces included)."""
    sides = instance.effective_sides
    dims = np.maximum(np.ceil(sides - 1e-9).astype(int), 1)
    idx = np.minimum(np.floor(instance.effective_positions).astype(int), dims - 1)
    flat = np.ravel_multi_index(idx.T, dims)
    return np.bincount(flat, minlength=math.prod(dims)).reshape(dims)
