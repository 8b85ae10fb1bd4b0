# scenario.py
"""
Scenario configuration: one JSON document per experiment.

 - chain (optional, defaults to the shipped 6R arm), trocar, camera, markers
   or a marker_layout, initial_q, gains, qp, otg, sequencing and timing keys
 - load errors raise ConfigError with a line number into the source file
 - the loaded scenario is validated against the initial configuration
   (shaft through the trocar, first marker visible)
"""

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from control.hqp_controller import CONTROLLER_MODES, HqpGains, default_k_rcm
from control.otg import OtgLimits
from errors import ConfigError, GeometryError
from kinematics.chain import JointSpec, KinematicChain, Pose, default_chain
from kinematics.jacobians import as_joint_vector, frame_transforms
from qp.qp_solver import QpSettings
from tasks.rcm_task import TrocarConfig, compute_rcm_state
from tasks.visual_task import CameraIntrinsics, Marker, project_point

logger = logging.getLogger("Scenario")

MAX_INITIAL_RCM_ERROR = 1e-3
DEFAULT_INTRINSICS = {"f": 800.0, "width": 640.0, "height": 512.0}


@dataclass(frozen=True)
class Scenario:
    chain: KinematicChain
    trocar: TrocarConfig
    intrinsics: CameraIntrinsics
    markers: Tuple[Marker, ...]
    initial_q: np.ndarray
    gains: HqpGains
    qp_settings: QpSettings = field(default_factory=QpSettings)
    otg_limits: OtgLimits = field(default_factory=OtgLimits)
    otg_enabled: bool = True
    switch_threshold: float = 10.0
    settle_cycles: int = 1
    dt: float = 0.002
    max_duration: float = 20.0
    seed: int = 0
    pixel_noise: float = 0.0
    controller: str = "hqp"
    name: str = "scenario"

    @property
    def n_cycles(self) -> int:
        return int(math.floor(self.max_duration / self.dt + 1e-9))

    def with_overrides(self, **changes) -> "Scenario":
        return replace(self, **changes)


# ---------------------------------------------------------------------
# Marker layout
# ---------------------------------------------------------------------
LAYOUT_OFFSETS = [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]


def layout_markers(chain: KinematicChain, q: Sequence[float], trocar: TrocarConfig,
                   side: float, depth: float = 0.08, count: int = 3, first_id: int = 1) -> List[Marker]:
    """
    Square of `side` on the plane through trocar + depth * shaft axis (at q),
    spanned by the camera's x/y axes. The first marker sits on the shaft axis,
    the next ones walk the square along camera y, then x.
    """
    if not 1 <= count <= len(LAYOUT_OFFSETS):
        raise ConfigError(f"marker_layout.count must lie in [1, {len(LAYOUT_OFFSETS)}], got {count}")
    if side <= 0 or depth <= 0:
        raise ConfigError(f"marker_layout side/depth must be positive (side={side}, depth={depth})")
    T = frame_transforms(chain, q)
    p_pre = T[chain.pre_rcm_frame][:3, 3]
    axis = T[chain.shaft_tip_frame][:3, 3] - p_pre
    axis = axis / np.linalg.norm(axis)
    x_cam, y_cam = T[chain.camera_frame][:3, 0], T[chain.camera_frame][:3, 1]
    anchor = trocar.p_trocar + depth * axis
    return [Marker(id=first_id + k, p_world=anchor + side * (ox * x_cam + oy * y_cam))
            for k, (ox, oy) in enumerate(LAYOUT_OFFSETS[:count])]


# ---------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------
def validate_scenario(s: Scenario, line_of=None) -> None:
    """Raises ConfigError on violations of the scenario invariants."""
    line_of = line_of or (lambda key: None)
    if not s.dt > 0:
        raise ConfigError(f"dt must be positive, got {s.dt}", line_of("dt"))
    if not s.max_duration > 0:
        raise ConfigError(f"max_duration must be positive, got {s.max_duration}", line_of("max_duration"))
    if not s.markers:
        raise ConfigError("scenario needs at least one marker", line_of("markers"))
    if s.switch_threshold < 0 or s.settle_cycles < 1:
        raise ConfigError("switch_threshold must be >= 0 and settle_cycles >= 1", line_of("switch_threshold"))
    if s.pixel_noise < 0:
        raise ConfigError(f"pixel_noise must be >= 0, got {s.pixel_noise}", line_of("pixel_noise"))
    if s.controller not in CONTROLLER_MODES:
        raise ConfigError(f"controller must be one of {CONTROLLER_MODES}, got {s.controller!r}", line_of("controller"))
    ids = [m.id for m in s.markers]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"marker ids must be unique, got {ids}", line_of("markers"))

    q = as_joint_vector(s.chain, s.initial_q)
    if np.any(q < s.chain.q_min) or np.any(q > s.chain.q_max):
        raise ConfigError("initial_q lies outside the joint limits", line_of("initial_q"))
    try:
        T = frame_transforms(s.chain, q)
        rcm = compute_rcm_state(s.chain, q, s.trocar, T)
        if rcm.e_rcm > MAX_INITIAL_RCM_ERROR:
            raise ConfigError(
                f"initial shaft misses the trocar by {rcm.e_rcm * 1e3:.3f} mm (limit 1 mm)", line_of("initial_q"))
        cam = T[s.chain.camera_frame]
        pt, _ = project_point(cam[:3, :3], cam[:3, 3], s.intrinsics, s.markers[0].p_world)
    except GeometryError as exc:
        raise ConfigError(f"initial configuration invalid: {exc}", line_of("initial_q")) from exc

    if not s.intrinsics.contains(pt.u, pt.v):
        raise ConfigError(f"first marker projects outside the image at ({pt.u:.1f}, {pt.v:.1f}) px", line_of("markers"))
    err = math.hypot(pt.u - s.intrinsics.c_u, pt.v - s.intrinsics.c_v)
    if err >= s.switch_threshold:
        logger.warning("[Scenario] %s: first marker starts %.1f px from the image center", s.name, err)


# ---------------------------------------------------------------------
# JSON loading
# ---------------------------------------------------------------------
class _ScenarioParser:
    def __init__(self, text: str, path: str):
        self.text = text
        self.path = path

    def line_of(self, key: str) -> int:
        match = re.search(r'"%s"\s*:' % re.escape(key), self.text)
        if not match:
            return 1
        return self.text.count("\n", 0, match.start()) + 1

    def fail(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, line=self.line_of(key), path=self.path)

    def require(self, data: Dict[str, Any], key: str, ctx: str = "") -> Any:
        if not isinstance(data, dict) or key not in data:
            where = f" in {ctx}" if ctx else ""
            return self._raise(key, f"missing required key '{key}'{where}")
        return data[key]

    def _raise(self, key: str, message: str):
        raise self.fail(key, message)

    def section(self, data: Dict[str, Any], key: str) -> Dict[str, Any]:
        value = data.get(key, {})
        if not isinstance(value, dict):
            self._raise(key, f"'{key}' must be an object, got {value!r}")
        return value

    def flag(self, value: Any, key: str) -> bool:
        if not isinstance(value, bool):
            self._raise(key, f"'{key}' must be true or false, got {value!r}")
        return value

    def number(self, value: Any, key: str, positive: bool = False) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self._raise(key, f"'{key}' must be a finite number, got {value!r}")
        if positive and value <= 0:
            self._raise(key, f"'{key}' must be positive, got {value!r}")
        return float(value)

    def vector(self, value: Any, key: str, length: Optional[int] = None) -> np.ndarray:
        if not isinstance(value, list) or (length is not None and len(value) != length):
            size = f" of length {length}" if length is not None else ""
            self._raise(key, f"'{key}' must be a list{size}, got {value!r}")
        return np.array([self.number(v, key) for v in value])

    def pose(self, data: Any, key: str) -> Pose:
        if not isinstance(data, dict):
            self._raise(key, f"'{key}' must be an object with position and quat_xyzw")
        position = self.vector(self.require(data, "position", key), "position", 3)
        quat = self.vector(data.get("quat_xyzw", [0.0, 0.0, 0.0, 1.0]), "quat_xyzw", 4)
        try:
            return Pose.from_quat(position, quat)
        except ConfigError as exc:
            self._raise(key, f"'{key}': {exc.message}")

    # -------- sections --------
    def chain(self, data: Any) -> KinematicChain:
        if data is None or data == "default":
            return default_chain()
        if not isinstance(data, dict):
            self._raise("chain", "'chain' must be \"default\" or an object")
        joints_raw = self.require(data, "joints", "chain")
        if not isinstance(joints_raw, list) or not joints_raw:
            self._raise("joints", "'joints' must be a non-empty list")
        joints = []
        for idx, raw in enumerate(joints_raw):
            vals = {k: self.number(self.require(raw, k, f"joints[{idx}]"), k)
                    for k in ("a", "alpha", "d", "q_min", "q_max")}
            vals["theta_offset"] = self.number(raw.get("theta_offset", 0.0), "theta_offset")
            try:
                joints.append(JointSpec(kind=raw.get("kind", "revolute"), **vals))
            except ConfigError as exc:
                self._raise("joints", f"joints[{idx}]: {exc.message}")
        tool = self.pose(self.require(data, "tool_transform", "chain"), "tool_transform")
        camera = self.pose(data["camera_mount"], "camera_mount") if "camera_mount" in data else tool
        base = self.pose(data["base"], "base") if "base" in data else Pose.identity()
        pre = data.get("pre_rcm_frame", len(joints))
        if isinstance(pre, bool) or not isinstance(pre, int):
            self._raise("pre_rcm_frame", f"'pre_rcm_frame' must be an integer, got {pre!r}")
        try:
            return KinematicChain(joints=tuple(joints), pre_rcm_frame=pre, tool_transform=tool,
                                  camera_mount=camera, base=base)
        except ConfigError as exc:
            self._raise("chain", exc.message)

    def camera(self, data: Any) -> CameraIntrinsics:
        data = DEFAULT_INTRINSICS if data is None else data
        if not isinstance(data, dict):
            self._raise("camera", "'camera' must be an object")
        width = self.number(self.require(data, "width", "camera"), "width", positive=True)
        height = self.number(self.require(data, "height", "camera"), "height", positive=True)
        c_u = self.number(data.get("c_u", width / 2.0), "c_u")
        c_v = self.number(data.get("c_v", height / 2.0), "c_v")
        try:
            if "fov_deg" in data and "f" not in data:
                return CameraIntrinsics.from_fov(self.number(data["fov_deg"], "fov_deg"), width, height, c_u, c_v)
            f = self.number(self.require(data, "f", "camera"), "f", positive=True)
            return CameraIntrinsics(f=f, c_u=c_u, c_v=c_v, width=width, height=height)
        except ConfigError as exc:
            self._raise("camera", exc.message)

    def markers(self, data: Dict[str, Any], chain: KinematicChain, q: np.ndarray,
                trocar: TrocarConfig) -> Tuple[Marker, ...]:
        if "markers" in data:
            raw = data["markers"]
            if not isinstance(raw, list) or not raw:
                self._raise("markers", "'markers' must be a non-empty list of {id, xyz}")
            out = []
            for idx, m in enumerate(raw):
                mid = self.require(m, "id", f"markers[{idx}]")
                if isinstance(mid, bool) or not isinstance(mid, int):
                    self._raise("id", f"markers[{idx}].id must be an integer, got {mid!r}")
                out.append(Marker(id=mid, p_world=self.vector(self.require(m, "xyz", f"markers[{idx}]"), "xyz", 3)))
            return tuple(out)
        if "marker_layout" in data:
            lay = data["marker_layout"]
            side = self.number(self.require(lay, "side", "marker_layout"), "side", positive=True)
            depth = self.number(lay.get("depth", 0.08), "depth", positive=True)
            count = lay.get("count", 3)
            first_id = lay.get("first_id", 1)
            if not isinstance(count, int) or not isinstance(first_id, int):
                self._raise("marker_layout", "marker_layout.count and first_id must be integers")
            try:
                return tuple(layout_markers(chain, q, trocar, side, depth, count, first_id))
            except ConfigError as exc:
                self._raise("marker_layout", exc.message)
        self._raise("markers", "missing required key 'markers' (or 'marker_layout')")

    def scenario(self, data: Any, name: str) -> Scenario:
        if not isinstance(data, dict):
            raise ConfigError("scenario root must be a JSON object", line=1, path=self.path)
        chain = self.chain(data.get("chain"))
        trocar = TrocarConfig(self.vector(self.require(data, "trocar"), "trocar", 3))
        intrinsics = self.camera(data.get("camera"))
        q0 = self.vector(self.require(data, "initial_q"), "initial_q", chain.n)
        markers = self.markers(data, chain, q0, trocar)

        dt = self.number(data.get("dt", 0.002), "dt", positive=True)
        g = self.section(data, "gains")
        try:
            gains = HqpGains(
                k_rcm=self.number(g.get("k_rcm", default_k_rcm(dt)), "k_rcm"),
                k_vis=self.number(g.get("k_vis", 2.0), "k_vis"),
                svd_tolerance=self.number(g.get("svd_tolerance", 1e-8), "svd_tolerance"),
                k_damp=self.number(g.get("k_damp", 0.0), "k_damp"),
                w_ins=self.number(g.get("w_ins", 0.0), "w_ins"),
                k_ins=self.number(g.get("k_ins", 2.0), "k_ins"),
            )
        except ConfigError as exc:
            self._raise("gains", exc.message)
        qp = self.section(data, "qp")
        try:
            qp_settings = QpSettings(
                eps_primal=self.number(qp.get("eps_primal", 1e-8), "eps_primal"),
                eps_dual=self.number(qp.get("eps_dual", 1e-8), "eps_dual"),
                max_iter=int(self.number(qp.get("max_iter", 10000), "max_iter")),
                regularization=self.number(qp.get("regularization", 1e-10), "regularization"),
            )
        except ConfigError as exc:
            self._raise("qp", exc.message)
        otg = self.section(data, "otg")
        try:
            otg_limits = OtgLimits(v_max=self.number(otg.get("v_max", 300.0), "v_max"),
                                   a_max=self.number(otg.get("a_max", 1500.0), "a_max"))
        except ConfigError as exc:
            self._raise("otg", exc.message)

        settle = data.get("settle_cycles", 1)
        seed = data.get("seed", 0)
        if not isinstance(settle, int) or not isinstance(seed, int):
            self._raise("settle_cycles", "settle_cycles and seed must be integers")

        return Scenario(
            chain=chain, trocar=trocar, intrinsics=intrinsics, markers=markers, initial_q=q0,
            gains=gains, qp_settings=qp_settings, otg_limits=otg_limits,
            otg_enabled=self.flag(otg.get("enabled", True), "enabled"),
            switch_threshold=self.number(data.get("switch_threshold", 10.0), "switch_threshold"),
            settle_cycles=settle, dt=dt,
            max_duration=self.number(data.get("max_duration", 20.0), "max_duration", positive=True),
            seed=seed, pixel_noise=self.number(data.get("pixel_noise", 0.0), "pixel_noise"),
            controller=str(data.get("controller", "hqp")), name=str(data.get("name", name)),
        )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc.strerror}", line=None, path=str(path)) from exc
    return parse_scenario(text, str(path), name=path.stem)


def parse_scenario(text: str, path: str = "<scenario>", name: str = "scenario") -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON (column {exc.colno}): {exc.msg}", line=exc.lineno, path=path) from exc
    parser = _ScenarioParser(text, path)
    scenario = parser.scenario(data, name)
    try:
        validate_scenario(scenario, parser.line_of)
    except ConfigError as exc:
        exc.path = path
        if exc.line is None:
            exc.line = 1
        raise
    logger.info("[Scenario] loaded %s: %d joints, %d markers, %d cycles", scenario.name,
                scenario.chain.n, len(scenario.markers), scenario.n_cycles)
    return scenario
