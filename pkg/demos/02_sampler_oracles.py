"""
Checking the ODE sampler against closed-form denoisers
======================================================

When the data distribution is a point or a Gaussian, the ideal denoiser is
known exactly and so is the probability-flow trajectory. That lets us check
the Heun integrator without any network.
"""

import math

import numpy as np
import torch

from maskdit.sampler import SamplerConfig, integrate, time_schedule

# the default noise-level schedule: 40 levels from 80 down to 0.002, then 0
t = time_schedule()
print("first / last levels:", t[0], t[-2], t[-1])

# point data at x*: D(x, t) = x*. The flow is a straight line, so every start lands on x*
x_star = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
x_T = 80 * torch.randn(3, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
out = integrate(x_T, lambda x, t: x_star.expand_as(x), SamplerConfig(num_steps=10))
print("point data, 10 steps, error:", float((out - x_star).abs().max()))

# Gaussian data N(mu, s^2): D(x, t) = (s^2 x + t^2 mu) / (s^2 + t^2)
mu, s = 0.7, 0.5
denoise = lambda x, t: (s**2 * x + t**2 * mu) / (s**2 + t**2)
x_T = torch.tensor([3.0, -40.0, 100.0], dtype=torch.float64)
exact = mu + (x_T - mu) * s / math.sqrt(s**2 + 80.0**2)

errors = []
for steps in (10, 20, 40, 80, 160):
    err = float((integrate(x_T.clone(), denoise, SamplerConfig(num_steps=steps)) - exact).abs().max())
    errors.append(err)
    print(f"{steps:4d} steps  error {err:.3e}")

# halving the step size cuts the error about 4x: second order
print("observed orders:", np.round(np.log2(np.array(errors[:-1]) / np.array(errors[1:])), 2))
