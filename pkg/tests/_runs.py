"""Acceptance-scale runs shared by the acceptance suite and the module tests."""

import functools
import time

import numpy as np

from ma_iterate.convex_body import build_body, regular_polygon
from ma_iterate.iteration import IterationConfig, run
from ma_iterate.oracle import exp_oracle_1d, power_oracle_1d, radial_shooting, separable_oracle_2d
from ma_iterate.profile import Profile

INTERVAL = build_body([-1.0, 1.0])
SQUARE = build_body([[-1, -1], [1, -1], [1, 1], [-1, 1]])
DISC = regular_polygon(1.0, 128)


def _timed(config):
    t0 = time.perf_counter()
    phi, trace = run(config)
    return phi, trace, time.perf_counter() - t0, config


@functools.lru_cache(maxsize=None)
def exp_1d():
    tau = exp_oracle_1d().tau
    return _timed(IterationConfig(INTERVAL, Profile.exponential(1), tau, 129, 8.0, 257))


@functools.lru_cache(maxsize=None)
def power_1d():
    return _timed(IterationConfig(INTERVAL, Profile.power(1, 1.0), np.pi / 2, 129, 8.0, 257))


@functools.lru_cache(maxsize=None)
def exp_square():
    tau = separable_oracle_2d().tau
    # graded rows put the row spacing where the density lives
    return _timed(IterationConfig(SQUARE, Profile.exponential(2), tau, 400, 22.0, 129,
                                  grid_grading=3.0))


@functools.lru_cache(maxsize=None)
def exp_disc():
    return _timed(IterationConfig(DISC, Profile.exponential(2), 3.0, 400, 24.0, 129, grid_grading=3.0))


@functools.lru_cache(maxsize=None)
def power_disc():
    # the power tail decays like |x|^-5; a bound of 1 on the truncated mass
    # is what a desk-scale box allows (see notes)
    return _timed(IterationConfig(DISC, Profile.power(2, 1.0), 2 * np.pi / 3, 400, 24.0, 129,
                                  tail_tol=1.0, grid_grading=4.0))


@functools.lru_cache(maxsize=None)
def disc_oracle(kind):
    if kind == "exp":
        return radial_shooting(Profile.exponential(2), DISC, 3.0)
    return radial_shooting(Profile.power(2, 1.0), DISC, 2 * np.pi / 3)


ALL_RUNS = {"exp_1d": exp_1d, "power_1d": power_1d, "exp_square": exp_square,
            "exp_disc": exp_disc, "power_disc": power_disc}


def disc_window(radius=3.0, count=121):
    ax = np.linspace(-radius, radius, count)
    x = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    return x[np.linalg.norm(x, axis=1) <= radius]


def square_window(radius=3.0, count=121):
    ax = np.linspace(-radius, radius, count)
    return np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
