"""Model parameters, quenched disorder and the droplet sign field.

Times are 1-based throughout the package: ``omega[i - 1]`` and ``eta[i - 1]``
belong to monomer ``i``.  A droplet sits on the axis site at time ``i`` iff
``eta[i - 1] == +1``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Purpose tags keep the random streams of different consumers disjoint.
STREAM_TAGS = {
    "omega": 1,
    "eta": 2,
    "skeleton": 3,
    "fill": 4,
    "walk": 5,
    "mc": 6,
}

MAX_HORIZON = 100_000


def fmt(x) -> str:
    """Round-trip decimal text for a float (17 significant digits)."""
    return format(float(x), ".17g")


def stream(seed: int, replica: int = 0, tag: str = "mc") -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, replica, tag)``.

    The stream depends only on its key, never on the order in which streams
    are created, so parallel jobs reproduce serial runs exactly.
    """
    key = np.random.SeedSequence([int(seed), int(replica), STREAM_TAGS[tag]])
    return np.random.Generator(np.random.Philox(key))


def replica_seed(base_seed: int, index: int) -> int:
    """64-bit disorder seed for replica ``index`` of a run."""
    ss = np.random.SeedSequence([int(base_seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ModelParams:
    lam: float
    h: float
    p: float
    d: int
    n: int

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0 <= self.p <= 1:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not np.isfinite(self.h):
            raise ValueError(f"h must be finite, got {self.h}")

    def replace(self, **changes) -> "ModelParams":
        values = dict(lam=self.lam, h=self.h, p=self.p, d=self.d, n=self.n)
        values.update(changes)
        return ModelParams(**values)

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "h": self.h, "p": self.p, "d": self.d, "n": self.n}


@dataclass(frozen=True, eq=False)
class Disorder:
    """One quenched realization of monomer types and droplet indicators."""

    omega: np.ndarray
    eta: np.ndarray
    seed: int
    p: float = field(default=float("nan"))

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=np.int8)
        eta = np.asarray(self.eta, dtype=np.int8)
        if omega.ndim != 1 or omega.shape != eta.shape:
            raise ValueError("omega and eta must be 1-D arrays of equal length")
        for name, arr in (("omega", omega), ("eta", eta)):
            if not np.all(np.abs(arr) == 1):
                raise ValueError(f"{name} entries must be +1 or -1")
        omega.flags.writeable = False
        eta.flags.writeable = False
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "eta", eta)

    @property
    def n(self) -> int:
        return len(self.omega)

    def __eq__(self, other):
        if not isinstance(other, Disorder):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.omega, other.omega)
            and np.array_equal(self.eta, other.eta)
        )

    def window(self, start: int, length: int) -> "Disorder":
        """Disorder seen by a polymer started at time ``start`` (monomers start+1..start+length)."""
        if start < 0 or start + length > self.n:
            raise IndexError(f"window [{start}, {start + length}] outside horizon {self.n}")
        return Disorder(self.omega[start:start + length], self.eta[start:start + length], self.seed, self.p)

    def to_json(self) -> str:
        return json.dumps({
            "seed": int(self.seed),
            "n": self.n,
            "p": self.p,
            "omega": self.omega.tolist(),
            "eta": self.eta.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Disorder":
        obj = json.loads(text)
        dis = cls(np.array(obj["omega"]), np.array(obj["eta"]), int(obj["seed"]), float(obj["p"]))
        if dis.n != obj["n"]:
            raise ValueError(f"declared n={obj['n']} but arrays have length {dis.n}")
        return dis

    def dump(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Disorder":
        return cls.from_json(Path(path).read_text())


def sample_disorder(params: ModelParams, seed: int) -> Disorder:
    """Draw (omega, eta) for ``params.n`` monomers.

    Arrays are generated sequentially, so the disorder for horizon ``n`` is a
    prefix of the disorder for any longer horizon with the same seed.
    """
    n = params.n
    u_omega = stream(seed, 0, "omega").random(n)
    u_eta = stream(seed, 0, "eta").random(n)
    omega = np.where(u_omega < 0.5, 1, -1).astype(np.int8)
    eta = np.where(u_eta < params.p, 1, -1).astype(np.int8)
    return Disorder(omega, eta, int(seed), float(params.p))


def delta(disorder: Disorder, i: int, at_origin: bool) -> int:
    """Sign field at time ``i``: -1 on a droplet, +1 elsewhere."""
    if not 1 <= i <= disorder.n:
        raise IndexError(f"time {i} outside 1..{disorder.n}")
    if at_origin and disorder.eta[i - 1] == 1:
        return -1
    return 1
