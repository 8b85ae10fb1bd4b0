# conftest.py
import math
from pathlib import Path

import numpy as np
import pytest

from kinematics.chain import JointSpec, KinematicChain, Pose, default_chain
from scenario import load_scenario
from simulator import run_scenario

ROOT = Path(__file__).resolve().parent
SCENARIO_DIR = ROOT / "scenarios"

REPLICA_Q = np.array([0.0, 0.90929867146016852, 0.66671028507465269, 0.0, -1.5760089565348212, 0.0])
REPLICA_TROCAR = np.array([0.565, 0.0, 0.268])


def simple_chain(joints, tool=(0.0, 0.0, 0.0), pre_rcm_frame=None, base=None) -> KinematicChain:
    """Chain from (a, alpha, d) rows with wide limits and a pure-translation tool."""
    specs = tuple(JointSpec(a=a, alpha=al, d=d, theta_offset=0.0, q_min=-math.pi, q_max=math.pi)
                  for a, al, d in joints)
    tip = Pose(np.eye(3), np.array(tool, dtype=float))
    return KinematicChain(
        joints=specs,
        pre_rcm_frame=len(specs) if pre_rcm_frame is None else pre_rcm_frame,
        tool_transform=tip,
        camera_mount=tip,
        base=base or Pose.identity(),
    )


@pytest.fixture
def chain() -> KinematicChain:
    return default_chain()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def replica_path() -> Path:
    return SCENARIO_DIR / "replica.json"


@pytest.fixture(scope="session")
def centered_path() -> Path:
    return SCENARIO_DIR / "centered_single.json"


@pytest.fixture(scope="session")
def replica_scenario(replica_path):
    return load_scenario(replica_path)


@pytest.fixture(scope="session")
def replica_result(replica_scenario):
    """Full 20 s replica run, computed once per session."""
    return run_scenario(replica_scenario, record_timing=False)
