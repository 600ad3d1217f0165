"""On-disk JSON format for schedules.

Files are UTF-8 JSON with a fixed key order; floats rely on Python's
shortest-round-trip repr (17 significant digits where needed), so
emit -> parse -> emit reproduces the bytes exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import __version__
from .schedules import LambdaGrid

__all__ = ["ScheduleFile", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScheduleFile:
    schedule_family: str
    T: float
    eps: float
    N: int
    lam: list[float]
    t: list[float]
    orders: list[int]
    polynomial_kind: str
    p: int
    objective: float
    init: str
    schema_version: int = SCHEMA_VERSION
    tool_version: str = __version__
    converged: bool | None = None

    def __post_init__(self):
        if len(self.lam) != self.N + 1 or len(self.t) != self.N + 1:
            raise ValueError("node arrays must have N + 1 entries")
        if len(self.orders) != self.N:
            raise ValueError("orders must have N entries")
        if not all(b > a for a, b in zip(self.lam, self.lam[1:])):
            raise ValueError("log-SNR nodes must be strictly increasing")
        if not all(b < a for a, b in zip(self.t, self.t[1:])):
            raise ValueError("time nodes must be strictly decreasing")

    @classmethod
    def from_grid(
        cls,
        grid: LambdaGrid,
        schedule_family: str,
        orders,
        polynomial_kind: str,
        p: int,
        objective: float,
        init: str,
        converged: bool | None = None,
    ) -> "ScheduleFile":
        return cls(
            schedule_family=schedule_family,
            T=float(grid.T),
            eps=float(grid.eps),
            N=grid.n_steps,
            lam=[float(v) for v in grid.lam],
            t=[float(v) for v in grid.t],
            orders=[int(k) for k in orders.k],
            polynomial_kind=polynomial_kind,
            p=int(p),
            objective=float(objective),
            init=init,
            converged=converged,
        )

    def to_grid(self) -> LambdaGrid:
        return LambdaGrid(
            lam=np.array(self.lam), t=np.array(self.t), T=self.T, eps=self.eps
        )

    def emit(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "schedule_family": self.schedule_family,
            "T": self.T,
            "eps": self.eps,
            "N": self.N,
            "lambda": self.lam,
            "t": self.t,
            "orders": self.orders,
            "polynomial_kind": self.polynomial_kind,
            "p": self.p,
            "objective": self.objective,
            "init": self.init,
            "tool_version": self.tool_version,
        }
        if self.converged is not None:
            payload["converged"] = self.converged
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ScheduleFile":
        payload = json.loads(text)
        return cls(
            schema_version=int(payload["schema_version"]),
            schedule_family=payload["schedule_family"],
            T=float(payload["T"]),
            eps=float(payload["eps"]),
            N=int(payload["N"]),
            lam=[float(v) for v in payload["lambda"]],
            t=[float(v) for v in payload["t"]],
            orders=[int(v) for v in payload["orders"]],
            polynomial_kind=payload["polynomial_kind"],
            p=int(payload["p"]),
            objective=float(payload["objective"]),
            init=payload["init"],
            tool_version=payload["tool_version"],
            converged=payload.get("converged"),
        )

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.emit())

    @classmethod
    def read(cls, path) -> "ScheduleFile":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())
