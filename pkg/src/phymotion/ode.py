"""Fixed-step ODE integration on the autodiff graph.

Gradients come from backpropagating through the unrolled solver steps, so the
derivative is exact for the discrete computation that produced the forward
values.
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .errors import DivergenceError, ParameterError, ShapeError
from .nn import MLP, Module
from .tensor import Tensor

log = logging.getLogger(__name__)

METHODS = ("rk4", "euler")


def _check_finite(z, step):
    if not np.all(np.isfinite(z.data)):
        raise DivergenceError(f"non-finite latent state after solver step {step}", step=step)


def euler_step(f, z, t, h):
    return z + h * f(z, t)


def rk4_step(f, z, t, h):
    half = 0.5 * h
    k1 = f(z, t)
    k2 = f(z + half * k1, t + half)
    k3 = f(z + half * k2, t + half)
    k4 = f(z + h * k3, t + h)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_STEPPERS = {"rk4": rk4_step, "euler": euler_step}


def n_steps_for(horizon, step):
    if step <= 0:
        raise ParameterError(f"step size must be positive, got {step}")
    if horizon <= 0:
        raise ParameterError(f"horizon must be positive, got {horizon}")
    n = int(round(horizon / step))
    if n < 1 or abs(n * step - horizon) > 1e-9:
        raise ParameterError(f"horizon {horizon} is not an integer multiple of step {step}")
    return n


def ode_solve(f, z0, horizon, step, method="rk4", t0=0.0):
    """Integrate ``dz/dt = f(z, t)`` from ``t0`` over ``horizon`` with fixed ``step``.

    Returns the list of states ``[z(t0), z(t0 + h), ..., z(t0 + horizon)]``.
    ``f`` takes and returns Tensors of the same shape; arrays are accepted for
    ``z0`` and wrapped.
    """
    if method not in _STEPPERS:
        raise ParameterError(f"unknown solver {method!r}, expected one of {METHODS}")
    n = n_steps_for(horizon, step)
    stepper = _STEPPERS[method]
    z = T.as_tensor(z0)
    states = [z]
    for i in range(n):
        z = stepper(f, z, t0 + i * step, step)
        _check_finite(z, i)
        states.append(z)
    return states


def rollout(f, z_t, n_steps, frame_dt, substeps=4, method="rk4", t0=0.0):
    """States at the next ``n_steps`` frame boundaries, one solve per frame interval."""
    if n_steps < 1:
        raise ParameterError(f"rollout needs at least one step, got {n_steps}")
    if substeps < 1:
        raise ParameterError(f"substeps must be >= 1, got {substeps}")
    h = frame_dt / substeps
    z = T.as_tensor(z_t)
    out = []
    for k in range(n_steps):
        try:
            z = ode_solve(f, z, frame_dt, h, method=method, t0=t0 + k * frame_dt)[-1]
        except DivergenceError as exc:
            raise DivergenceError(
                f"rollout diverged in frame {k + 1}: {exc}", step=k * substeps + (exc.step or 0)
            ) from exc
        out.append(z)
    return out


class DynamicsFn(Module):
    """Learned vector field over the latent state.

    A tanh MLP in the usual neural-ODE style.  With ``structured=True`` the
    state is read as ``[position block, velocity block]`` and the field is
    ``[velocity block, learned acceleration]``.  With ``time_input=True`` the
    time since the start of the rollout, divided by ``time_scale``, is
    appended to the MLP input.
    """

    def __init__(self, d_z, hidden, rng, structured=False, time_input=False, time_scale=1.0):
        if structured and d_z % 2:
            raise ShapeError(f"structured dynamics need an even latent size, got {d_z}")
        self.d_z = d_z
        self.structured = structured
        self.time_input = time_input
        self.time_scale = time_scale
        d_out = d_z // 2 if structured else d_z
        self.net = MLP([d_z + int(time_input), hidden, d_out], rng, activation="tanh", final_init="xavier")
        # start near the zero field so early rollouts stay close to the copy-last prediction
        last = self.net.layers[-1]
        last.weight.data *= 0.1

    def forward(self, z, t=0.0):
        if z.shape[-1] != self.d_z:
            raise ShapeError(f"dynamics expect latent size {self.d_z}, got {z.shape}")
        inp = z
        if self.time_input:
            col = np.full(z.shape[:-1] + (1,), t / self.time_scale, dtype=z.dtype)
            inp = T.concat([z, Tensor(col)], axis=-1)
        out = self.net(inp)
        if self.structured:
            half = self.d_z // 2
            return T.concat([z[..., half:], out], axis=-1)
        return out


class ZeroDynamics(Module):
    def forward(self, z, t=0.0):
        return z * 0.0


class LinearDynamics(Module):
    """``dz/dt = z A``; used by tests as an analytically solvable field."""

    def __init__(self, matrix):
        self.matrix = Tensor(np.asarray(matrix))

    def forward(self, z, t=0.0):
        return z @ self.matrix
