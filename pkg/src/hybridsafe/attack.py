"""Bounded sensor-attack transformation.

Replaces each sensing assignment ``q_s := q_p`` whose target is a declared
sensor by ``q_s := *; ?(q_s >= q_p - o & q_s <= q_p + o)``: the attacker
may report any value within offset o of the true physical quantity.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable

from .syntax.nodes import (
    And, Assign, AssignAny, Choice, Cmp, Const, Loop, Minus, ODE, Plus,
    Program, Seq, Test, Var,
)


class UnmatchedSensorAssignment(ValueError):
    pass


class SensorNeverAssigned(UserWarning):
    pass


class AttackSpecError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    """Which sensor variables the attacker controls and by how much."""

    sensors: FrozenSet[str]
    offsets: Dict[str, float]
    physical_of: Dict[str, str]

    def __init__(self, sensors: Iterable[str], offsets: Dict[str, float],
                 physical_of: Dict[str, str]):
        sensors = frozenset(sensors)
        if set(offsets) != set(sensors):
            raise AttackSpecError(
                "offsets must be defined exactly on the sensor set")
        if set(physical_of) != set(sensors):
            raise AttackSpecError(
                "every sensor needs a physical counterpart")
        for s, o in offsets.items():
            if not (float(o) >= 0.0):
                raise AttackSpecError(f"offset for {s!r} must be nonnegative")
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "offsets", dict(offsets))
        object.__setattr__(self, "physical_of", dict(physical_of))

    def __hash__(self):
        return hash((self.sensors,
                     tuple(sorted(self.offsets.items())),
                     tuple(sorted(self.physical_of.items()))))

    @classmethod
    def from_json(cls, doc: dict) -> "AttackSpec":
        try:
            table = doc["sensors"]
        except (KeyError, TypeError):
            raise AttackSpecError('attack file needs a top-level "sensors" map')
        sensors = []
        offsets = {}
        physical = {}
        for name, entry in table.items():
            sensors.append(name)
            try:
                physical[name] = str(entry["physical"])
                offsets[name] = float(entry["offset"])
            except (KeyError, TypeError, ValueError):
                raise AttackSpecError(
                    f'sensor {name!r} needs "physical" and numeric "offset"')
        return cls(sensors, offsets, physical)

    @classmethod
    def load(cls, path: str) -> "AttackSpec":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {"sensors": {
            s: {"physical": self.physical_of[s], "offset": float(self.offsets[s])}
            for s in sorted(self.sensors)
        }}


def _attacked_assign(q_s: str, q_p: str, o: float) -> Program:
    off = Const(repr(float(o)))
    bound = And(
        Cmp(">=", Var(q_s), Minus(Var(q_p), off)),
        Cmp("<=", Var(q_s), Plus(Var(q_p), off)),
    )
    return Seq(AssignAny(q_s), Test(bound))


def apply_attack(p: Program, a: AttackSpec, warn: bool = True) -> Program:
    """The program with every sensing assignment to a sensor in `a`
    replaced by a bounded nondeterministic read. Raises
    UnmatchedSensorAssignment if an assignment targets a sensor but its
    right-hand side is not the paired physical variable; warns with
    SensorNeverAssigned for sensors the program never assigns. Pass
    warn=False when transforming a fragment of a larger program, where
    an unassigned sensor is expected."""
    seen: set = set()

    def walk(node: Program) -> Program:
        if isinstance(node, Assign):
            if node.var in a.sensors:
                q_p = a.physical_of[node.var]
                if not (isinstance(node.term, Var) and node.term.name == q_p):
                    raise UnmatchedSensorAssignment(
                        f"assignment to sensor {node.var!r} is not a read of "
                        f"its physical variable {q_p!r}")
                seen.add(node.var)
                return _attacked_assign(node.var, q_p, a.offsets[node.var])
            return node
        if isinstance(node, AssignAny):
            return node
        if isinstance(node, Test):
            return node
        if isinstance(node, ODE):
            return node
        if isinstance(node, Seq):
            return Seq(walk(node.first), walk(node.second))
        if isinstance(node, Choice):
            return Choice(walk(node.left), walk(node.right))
        if isinstance(node, Loop):
            return Loop(walk(node.body))
        raise TypeError(f"not a program: {node!r}")

    out = walk(p)
    if warn:
        for s in sorted(a.sensors - seen):
            warnings.warn(f"sensor {s!r} is never assigned in the program",
                          SensorNeverAssigned, stacklevel=2)
    return out
