"""Independent reference implementations used only to check the package.

These deliberately avoid the package's own math paths: the DH oracle
multiplies four elementary transforms per link instead of one closed-form
matrix, and the DMP oracle is a scalar Euler loop over the raw fitted
parameters.
"""

import math

import numpy as np


def rot_z(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])


def rot_x(alpha):
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1]])


def trans(x, y, z):
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def dh_chain_oracle(q, a, d, alpha, theta_offset):
    """Forward kinematics as an explicit product of elementary transforms."""
    T = np.eye(4)
    for i in range(len(q)):
        theta = q[i] + theta_offset[i]
        T = T @ rot_z(theta) @ trans(0, 0, d[i]) @ trans(a[i], 0, 0) @ rot_x(alpha[i])
    return T


def integrate_dmp_oracle(weights, centers, widths, y0, g, scale, tau, alpha_z, beta_z, alpha_x, dt, duration):
    """Scalar Euler integration of one transformation system.

    tau*z' = alpha_z*(beta_z*(g - y) - z) + f(x),  tau*y' = z,
    f(x) = x * scale * sum(psi_i * w_i) / sum(psi_i) inside the trained
    phase support (x >= min center), 0 past it,
    x(t) = exp(-alpha_x * t / tau),
    z(0) chosen so that z'(0) = 0 (zero-acceleration start).
    """

    def forcing(x):
        if x < min(centers):
            return 0.0
        num = 0.0
        den = 0.0
        for w, c, h in zip(weights, centers, widths):
            psi = math.exp(-h * (x - c) ** 2)
            num += psi * w
            den += psi
        return 0.0 if den < 1e-10 else x * scale * num / den

    n_steps = math.ceil(duration / dt)
    y = float(y0)
    z = beta_z * (g - y0) + forcing(1.0) / alpha_z
    out = [y]
    for k in range(n_steps):
        f = forcing(math.exp(-alpha_x * (k * dt) / tau))
        dz = (alpha_z * (beta_z * (g - y) - z) + f) / tau
        dy = z / tau
        y = y + dt * dy
        z = z + dt * dz
        out.append(y)
    return np.array(out)


def half_normal_mean(sigma):
    """Expected |e| for e ~ N(0, sigma^2)."""
    return sigma * math.sqrt(2.0 / math.pi)
