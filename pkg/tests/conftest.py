import math

import numpy as np
import pytest

from dvocsim.control import DvocParams
from dvocsim.scenario import parse_scenario_dict

OMEGA0 = 2.0 * math.pi * 60.0

# Reference per-unit design used throughout the tests (fast to simulate).
PU_PARAMS = DvocParams(eta=43.43, alpha=0.9722, kappa=math.pi / 2.0,
                       p_star=0.5, q_star=0.0, v_star=1.0, omega0=OMEGA0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pu_scenario_dict(load_g=0.5, branch_r=0.01, branch_l=0.0, cap=0.0,
                     p_star=0.5, q_star=0.0, initial=None, events=(),
                     sim=None, control="dvoc", kp=None, kq=None):
    """Single-inverter per-unit scenario document for unit tests."""
    inv = {"id": "inv1", "node": "n1", "control": control,
           "p_star_w": p_star, "q_star_var": q_star, "v_star_peak": 1.0,
           "initial": initial or {"mode": "nominal", "angle_rad": 0.0}}
    if control == "dvoc":
        inv.update(eta=43.43, alpha=0.9722, kappa_rad=math.pi / 2.0)
    else:
        inv.update(kp_rad_per_sw=kp, kq_v_per_var=kq)
    caps = [{"node": "n1", "c_farad": cap}] if cap else []
    return {
        "name": "pu-test",
        "omega0_rad_per_s": OMEGA0,
        "inverters": [inv],
        "network": {
            "branches": [{"id": "b1", "from": "n1", "to": "bus",
                          "r_ohm": branch_r, "l_henry": branch_l,
                          "connected": True}],
            "loads": [{"node": "bus", "g_siemens": load_g}],
            "shunt_caps": caps,
        },
        "events": list(events),
        "sim": sim or {"dt_s": 2e-5, "t_end_s": 0.3,
                       "network_model": "quasistatic",
                       "record_decimation": 5, "noise_seed": 7},
    }


def pu_scenario(**kwargs):
    return parse_scenario_dict(pu_scenario_dict(**kwargs))
