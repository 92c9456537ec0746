"""Robot description files: TOML with ``[robot]``, ``[body]`` and optional
``[contact]`` tables. Validation errors name the offending key and the line
of the file where it is (or should be) found.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..mathkit import ConfigurationError
from .base import RobotConfig

ROBOT_REQUIRED = ("name", "n_joints", "orientation_dims", "nominal_pose", "joint_lower",
                  "joint_upper", "velocity_limit", "kp", "kd", "torque_limit")
ROBOT_OPTIONAL = ("action_lo", "action_hi", "regularized", "min_height_fraction", "max_roll",
                  "max_pitch", "q_scale", "joint_names")


def _key_lines(text: str) -> dict:
    """Map ``(table, key)`` and ``(table, None)`` to 1-based line numbers."""
    where, table = {}, ""
    for n, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            table = m.group(1).strip()
            where[(table, None)] = n
            continue
        m = re.match(r"^([A-Za-z0-9_\-]+)\s*=", s)
        if m:
            where[(table, m.group(1))] = n
    return where


class Description:
    """Parsed description with position-aware field access."""

    def __init__(self, text: str, source: str):
        self.source = source
        try:
            self.data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{source}: {exc}") from None
        self.lines = _key_lines(text)
        self.n_lines = len(text.splitlines())

    def position(self, table: str, key: str | None = None) -> str:
        line = self.lines.get((table, key)) or self.lines.get((table, None)) or self.n_lines
        return f"{self.source}:{line}"

    def table(self, name: str) -> dict:
        if name not in self.data:
            raise ConfigurationError(f"missing table [{name}] in {self.source}")
        return self.data[name]

    def require(self, table: str, keys, optional=()) -> dict:
        t = self.table(table)
        for k in keys:
            if k not in t:
                raise ConfigurationError(
                    f"missing required field '{table}.{k}' ({self.position(table)})")
        allowed = set(keys) | set(optional)
        for k in t:
            if k not in allowed:
                raise ConfigurationError(f"unknown field '{table}.{k}' ({self.position(table, k)})")
        return t


def load_description(name_or_path: str | Path) -> Description:
    """Load a built-in description by name (``biped``, ``pointmass``) or a file path."""
    p = Path(name_or_path)
    if p.suffix == ".toml" or p.exists():
        return Description(p.read_text(), str(p))
    ref = resources.files("omniwalk.env.robots") / f"{name_or_path}.toml"
    if not ref.is_file():
        raise ConfigurationError(f"unknown robot description {name_or_path!r}")
    return Description(ref.read_text(), f"{name_or_path}.toml")


def robot_config(desc: Description, nominal_height: float) -> RobotConfig:
    r = desc.require("robot", ROBOT_REQUIRED, ROBOT_OPTIONAL)
    n = int(r["n_joints"])
    for k in ("nominal_pose", "joint_lower", "joint_upper", "velocity_limit", "kp", "kd",
              "torque_limit"):
        if len(r[k]) != n:
            raise ConfigurationError(
                f"field 'robot.{k}' needs {n} entries ({desc.position('robot', k)})")
    try:
        return RobotConfig(
            n_joints=n,
            joint_lower=r["joint_lower"], joint_upper=r["joint_upper"],
            velocity_limit=r["velocity_limit"], kp=r["kp"], kd=r["kd"],
            torque_limit=r["torque_limit"], nominal_pose=r["nominal_pose"],
            action_lo=float(r.get("action_lo", -0.1)), action_hi=float(r.get("action_hi", 0.1)),
            orientation_dims=int(r["orientation_dims"]),
            regularized=tuple(r.get("regularized", range(n))),
            min_height=float(r.get("min_height_fraction", 0.6)) * nominal_height,
            max_roll=float(r.get("max_roll", 0.5)), max_pitch=float(r.get("max_pitch", 0.5)),
            q_scale=r.get("q_scale"),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"{exc} ({desc.position('robot')})") from None
