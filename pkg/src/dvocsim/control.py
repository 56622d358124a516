"""Grid-forming inverter control laws in the stationary alpha-beta frame.

Conventions used throughout the package:

* An alpha-beta signal is a real 2-vector ``(a, b)``; its Euclidean norm is
  the peak amplitude of the underlying sinusoid.  ``v_star`` is therefore a
  peak voltage (scenario files may give RMS; conversion happens in the
  parser, nowhere else).
* Instantaneous powers at a terminal are ``p = v @ i_o`` and
  ``q = v @ (J @ i_o)`` with ``J`` the quarter-turn rotation.  No RMS, 1/2 or
  3/2 factors are applied anywhere; with this convention a load of
  conductance ``g`` absorbs ``p = g * |v|**2``.  Positive ``q`` is delivery
  to an inductive load; a shunt capacitor shows up as negative ``q``.
* Angles are radians, frequencies rad/s.  Polar angles are kept unwrapped so
  frequency can be estimated by differentiation.

All functions are pure and stateless.
"""

import math
from dataclasses import dataclass

import numpy as np

# Quarter-turn rotation, written out exactly (rotation(pi/2) carries ~1e-16
# cosine residue).
J = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class DvocParams:
    """Oscillator controller constants and set-points.

    eta     -- synchronization gain, Ohm*rad/s
    alpha   -- amplitude regulation gain, Siemens
    kappa   -- rotation angle matching the network's impedance angle, rad,
               in [0, pi]; pi/2 for inductive lines, 0 for resistive lines
    p_star  -- active power set-point, W
    q_star  -- reactive power set-point, var
    v_star  -- voltage amplitude set-point (peak), V
    omega0  -- nominal grid frequency, rad/s
    """

    eta: float
    alpha: float
    kappa: float
    p_star: float
    q_star: float
    v_star: float
    omega0: float

    def __post_init__(self):
        vals = [self.eta, self.alpha, self.kappa, self.p_star, self.q_star,
                self.v_star, self.omega0]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("DvocParams fields must be finite")
        if self.eta <= 0.0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.kappa <= math.pi:
            raise ValueError(f"kappa must be in [0, pi], got {self.kappa}")
        if self.v_star <= 0.0:
            raise ValueError(f"v_star must be > 0, got {self.v_star}")
        if self.omega0 <= 0.0:
            raise ValueError(f"omega0 must be > 0, got {self.omega0}")


@dataclass(frozen=True)
class DroopParams:
    """Conventional droop controller constants (frequency and amplitude laws).

    kp -- frequency droop coefficient, rad/s per W
    kq -- amplitude droop coefficient, V per var
    """

    kp: float
    kq: float
    omega0: float
    v_star: float
    p_star: float
    q_star: float

    def __post_init__(self):
        vals = [self.kp, self.kq, self.omega0, self.v_star, self.p_star, self.q_star]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("DroopParams fields must be finite")
        if self.v_star <= 0.0:
            raise ValueError(f"v_star must be > 0, got {self.v_star}")
        if self.omega0 <= 0.0:
            raise ValueError(f"omega0 must be > 0, got {self.omega0}")


@dataclass(frozen=True)
class PolarState:
    """Voltage in polar form: (amplitude, unwrapped angle)."""

    magnitude: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.magnitude) and math.isfinite(self.theta)):
            raise ValueError("PolarState fields must be finite")
        if self.magnitude < 0.0:
            raise ValueError(f"magnitude must be >= 0, got {self.magnitude}")


def rotation(kappa):
    """2D rotation matrix [[cos k, -sin k], [sin k, cos k]]."""
    if not math.isfinite(kappa):
        raise ValueError("kappa must be finite")
    c, s = math.cos(kappa), math.sin(kappa)
    return np.array([[c, -s], [s, c]])


def gain_matrix(params):
    """Set-point gain matrix (1/v_star^2) R(kappa) (p_star*I - q_star*J).

    Equals (1/v_star^2) R(kappa) [[p_star, q_star], [-q_star, p_star]].
    """
    core = params.p_star * np.eye(2) - params.q_star * J
    return rotation(params.kappa) @ core / params.v_star**2


def magnitude_error(v, v_star):
    """Normalized amplitude error (v_star^2 - |v|^2) / v_star^2.

    Zero exactly when the amplitude sits at the set-point; 1 at the origin.
    """
    if v_star <= 0.0:
        raise ValueError(f"v_star must be > 0, got {v_star}")
    v = np.asarray(v, dtype=float)
    return (v_star**2 - float(v @ v)) / v_star**2


def phase_error(v, i_o, params):
    """Synchronization error K v - R(kappa) i_o.

    Vanishes exactly when v @ i_o = p_star, v @ J i_o = q_star and
    |v| = v_star simultaneously.
    """
    v = np.asarray(v, dtype=float)
    i_o = np.asarray(i_o, dtype=float)
    return gain_matrix(params) @ v - rotation(params.kappa) @ i_o


def dvoc_rhs(state, i_o, params):
    """Oscillator voltage derivative dv/dt, V/s.

    dv/dt = omega0 J v + eta (K v - R(kappa) i_o + alpha phi(v) v), built here
    from the phase/magnitude error decomposition so that
    dvoc_rhs == omega0 J v + eta*phase_error + eta*alpha*magnitude_error*v
    holds to rounding.
    """
    v = np.asarray(state, dtype=float)
    e_theta = phase_error(v, i_o, params)
    e_v = magnitude_error(v, params.v_star) * v
    return params.omega0 * (J @ v) + params.eta * e_theta + params.eta * params.alpha * e_v


def current_for_power(v, p, q):
    """The unique current with v @ i = p and v @ J i = q, for v != 0.

    i = (p v - q J v) / |v|^2; inverts the power measurement and is how a
    polar-form (p, q) pair is mapped back to a terminal current.
    """
    v = np.asarray(v, dtype=float)
    n2 = float(v @ v)
    if n2 == 0.0:
        raise ValueError("current_for_power undefined at v = 0")
    return (p * v - q * (J @ v)) / n2


def dvoc_rhs_polar(state, p, q, params):
    """Oscillator law in polar coordinates: (d|v|/dt, dtheta/dt).

    General-kappa form; for kappa = pi/2 it reduces to
        dtheta/dt = omega0 + eta (p_star/v_star^2 - p/|v|^2)
        d|v|/dt   = eta (q_star/v_star^2 - q/|v|^2) |v|
                    + (eta alpha / v_star^2)(v_star^2 - |v|^2) |v|.
    The polar chart is singular at the origin, so magnitude must be > 0.
    """
    r = state.magnitude
    if r <= 0.0:
        raise ValueError("polar form undefined at zero magnitude")
    vs2 = params.v_star**2
    cp = params.p_star / vs2 - p / r**2
    cq = params.q_star / vs2 - q / r**2
    ck, sk = math.cos(params.kappa), math.sin(params.kappa)
    dmag = params.eta * r * (ck * cp + sk * cq) \
        + params.eta * params.alpha / vs2 * (vs2 - r**2) * r
    dtheta = params.omega0 + params.eta * (sk * cp - ck * cq)
    return dmag, dtheta


def droop_rhs(state, p, q, params):
    """Conventional droop baseline: (d|v|/dt, dtheta/dt).

    dtheta/dt = omega0 + kp (p_star - p)
    d|v|/dt   = -|v| + v_star + kq (q_star - q)
    """
    dtheta = params.omega0 + params.kp * (params.p_star - p)
    dmag = -state.magnitude + params.v_star + params.kq * (params.q_star - q)
    return dmag, dtheta


def droop_approx_freq(p, params):
    """Small-deviation frequency droop: omega0 + (eta/v_star^2)(p_star - p)."""
    return params.omega0 + params.eta / params.v_star**2 * (params.p_star - p)


def droop_approx_vmag_ss(q, params):
    """Coarse steady-state amplitude droop: v_star + (q_star - q)/(alpha v_star).

    This is the droop-coefficient form obtained by linearizing the amplitude
    law with |v|^2 ~ |v| v_star; its slope is twice the true tangent of the
    exact stationary curve (see droop_vmag_tangent_ss).
    """
    return params.v_star + (params.q_star - q) / (params.alpha * params.v_star)


def droop_vmag_tangent_ss(q, params):
    """First-order expansion of the exact stationary amplitude around (q_star, v_star).

    d|v|/dq of the kappa = pi/2 stationary condition at the set-point is
    -1 / (2 (alpha v_star - q_star / v_star)), half the slope of the coarse
    droop-coefficient form for q_star = 0.
    """
    denom = 2.0 * (params.alpha * params.v_star - params.q_star / params.v_star)
    if denom <= 0.0:
        raise ValueError("tangent undefined: alpha v_star^2 must exceed q_star")
    return params.v_star + (params.q_star - q) / denom


def kappa_from_line(omega0, l, r):
    """Impedance angle atan2(omega0 L, R) of a series RL line, in [0, pi/2].

    This is the kappa for which the controlled network is provably stable
    when all lines share the same L/R ratio.
    """
    if r < 0.0 or l < 0.0:
        raise ValueError("R and L must be >= 0")
    if r == 0.0 and l == 0.0:
        raise ValueError("R and L cannot both be zero")
    return math.atan2(omega0 * l, r)
