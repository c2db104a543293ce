"""Versioned JSON scenario files.

Floats are written with ``repr`` precision by :mod:`json`, so
``load(save(s))`` reproduces a scenario exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from crowdnav.env import Scenario, ScenarioError, TaskKind
from crowdnav.pedsim import (
    Pedestrian,
    PedType,
    RegionTrigger,
    RobotNearTrigger,
    ScriptEntry,
    SocialState,
    StateScript,
    TimeTrigger,
)
from crowdnav.world import WorldMap

SCHEMA_VERSION = 1


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _opt(a):
    return None if a is None else _floats(a)


def _trigger_to_dict(t) -> dict:
    if isinstance(t, TimeTrigger):
        return {"time": float(t.time)}
    if isinstance(t, RegionTrigger):
        return {"region": [float(t.center[0]), float(t.center[1]), float(t.radius)]}
    if isinstance(t, RobotNearTrigger):
        return {"robot_near": float(t.distance)}
    raise TypeError(f"unknown trigger {t!r}")


def _trigger_from_dict(d: dict):
    if "time" in d:
        return TimeTrigger(float(d["time"]))
    if "region" in d:
        cx, cy, r = d["region"]
        return RegionTrigger((float(cx), float(cy)), float(r))
    if "robot_near" in d:
        return RobotNearTrigger(float(d["robot_near"]))
    raise ScenarioError(f"unknown trigger {d!r}")


def scenario_to_dict(s: Scenario) -> dict:
    peds = []
    for p, script in s.pedestrians:
        peds.append(
            {
                "id": int(p.id),
                "position": _floats(p.position),
                "velocity": _floats(p.velocity),
                "radius": float(p.radius),
                "type": p.ped_type.name.lower(),
                "state": p.state.name.lower(),
                "desired_speed": None if p.desired_speed is None else float(p.desired_speed),
                "goal": _opt(p.goal),
                "safety_distance": float(p.safety_distance),
                "group": p.group,
                "script": [
                    {
                        "trigger": _trigger_to_dict(e.trigger),
                        "state": SocialState(e.next_state).name.lower(),
                        "goal": _opt(e.new_goal),
                    }
                    for e in script.entries
                ],
            }
        )
    return {
        "schema": SCHEMA_VERSION,
        "task": s.task_kind.value,
        "seed": int(s.seed),
        "map": {
            "bounds": _floats(s.map.bounds),
            "walls": [_floats(w) for w in s.map.walls],
            "circles": [_floats(c) for c in s.map.static_obstacles],
        },
        "robot_start": _floats(s.robot_start),
        "end_goal": _floats(s.end_goal),
        "pedestrians": peds,
    }


def _enum(enum, name, what):
    try:
        return enum[str(name).upper()]
    except KeyError:
        raise ScenarioError(f"unknown {what} {name!r}") from None


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("scenario must be a mapping")
    if d.get("schema") != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario schema {d.get('schema')!r}, expected {SCHEMA_VERSION}")
    try:
        m = d["map"]
        world = WorldMap(
            bounds=tuple(m["bounds"]),
            walls=np.array(m.get("walls", []), dtype=float).reshape(-1, 4),
            static_obstacles=np.array(m.get("circles", []), dtype=float).reshape(-1, 3),
        )
        peds = []
        for e in d.get("pedestrians", []):
            tup = lambda v: None if v is None else tuple(float(x) for x in v)  # noqa: E731
            script = StateScript(
                [
                    ScriptEntry(_trigger_from_dict(s["trigger"]), _enum(SocialState, s["state"], "state"), tup(s.get("goal")))
                    for s in e.get("script", [])
                ]
            )
            ped = Pedestrian(
                id=int(e["id"]),
                position=e["position"],
                velocity=e.get("velocity", [0.0, 0.0]),
                radius=float(e.get("radius", 0.3)),
                ped_type=_enum(PedType, e.get("type", "adult"), "pedestrian type"),
                state=_enum(SocialState, e.get("state", "walking"), "state"),
                desired_speed=e.get("desired_speed"),
                goal=e.get("goal"),
                safety_distance=e.get("safety_distance"),
                group=e.get("group"),
            )
            peds.append((ped, script))
        scenario = Scenario(
            map=world,
            robot_start=tuple(d["robot_start"]),
            end_goal=tuple(d["end_goal"]),
            pedestrians=peds,
            task_kind=TaskKind(d.get("task", "point")),
            seed=int(d.get("seed", 0)),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario: {exc!r}") from None
    return scenario.validate()


def dumps(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def loads(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from None
    return scenario_from_dict(data)


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dumps(s))


def load_scenario(path) -> Scenario:
    return loads(Path(path).read_text())
