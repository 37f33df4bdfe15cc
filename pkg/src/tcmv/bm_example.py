"""Stopped drifted Brownian market: hitting-time moments, FS integrand, pathwise identities.

The price is S_t = W_t + t stopped at sigma, the first time X_t = W_t + t/2
reaches log 2.  sigma is inverse Gaussian with mean 2 log 2 and shape
(log 2)^2, which gives the moment oracles.  The Monte Carlo part simulates X
on a grid with a counter-based generator, so every path has its own stream
and the output does not depend on the number of threads.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import ConfigError

if "NUMBA_THREADING_LAYER" not in os.environ:
    # workqueue is always available and avoids probing optional backends
    nb.config.THREADING_LAYER = "workqueue"

LOG2 = math.log(2.0)
DRIFT = 0.5
BARRIER = LOG2
IG_MEAN = BARRIER / DRIFT
IG_SHAPE = BARRIER ** 2


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def ig_raw_moments(mean: float, shape: float, order: int) -> list[float]:
    """E[X^k], k = 0..order, for the inverse Gaussian law.

    Uses E[X^{k+1}] = (2k - 1) mean^2/shape E[X^k] + mean^2 E[X^{k-1}].
    """
    m = [1.0, mean]
    for k in range(1, order):
        m.append((2 * k - 1) * mean * mean / shape * m[k] + mean * mean * m[k - 1])
    return m[: order + 1]


def oracle_moments() -> tuple[float, float, float]:
    """(E[sigma], E[sigma^2], E[sigma^4])."""
    m = ig_raw_moments(IG_MEAN, IG_SHAPE, 4)
    return m[1], m[2], m[4]


def laplace_transform(alpha: float, a: float = DRIFT, b: float = BARRIER) -> float:
    """E[exp(-alpha tau)] for tau = inf{t : W_t + a t = b}, a, b > 0."""
    return math.exp(a * b - b * math.sqrt(2.0 * alpha + a * a))


def fs_integrand_f(s: float, t: float) -> tuple[float, float]:
    """f(s, t) = (log 2 - (s - t)) exp(s - t/2) and its s-derivative."""
    e = math.exp(s - 0.5 * t)
    return (LOG2 - (s - t)) * e, (LOG2 - 1.0 - (s - t)) * e


# ---------------------------------------------------------------------------
# simulation kernel
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_PATH_MUL = np.uint64(0xD1B54A32D192ED03)
_BRIDGE_SALT = np.uint64(0xA5A5A5A5A5A5A5A5)


@nb.njit(inline="always", cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always", cache=True)
def _uniform(key, ctr):
    # 53-bit uniform in (0, 1]
    z = _mix(key + ctr * _GOLDEN)
    return ((z >> np.uint64(11)) + np.uint64(1)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def _one_path(seed, i, dt, nmax, bridge, track_gain):
    sq = math.sqrt(dt)
    key = _mix(np.uint64(seed) ^ (np.uint64(i) * _PATH_MUL))
    bkey = _mix(key ^ _BRIDGE_SALT)
    tiny = 2.0 ** -53
    x = 0.0
    gain = 0.0
    ctr = np.uint64(0)
    spare = 0.0
    have = False
    for k in range(1, nmax + 1):
        if have:
            z = spare
            have = False
        else:
            # Marsaglia polar method
            while True:
                v1 = 2.0 * _uniform(key, ctr) - 1.0
                v2 = 2.0 * _uniform(key, ctr + np.uint64(1)) - 1.0
                ctr += np.uint64(2)
                s = v1 * v1 + v2 * v2
                if 0.0 < s < 1.0:
                    break
            f = math.sqrt(-2.0 * math.log(s) / s)
            z = v1 * f
            spare = v2 * f
            have = True
        xn = x + DRIFT * dt + sq * z
        # E(S) = exp(X) held over the step, dS = dX + dt/2
        if track_gain:
            gain += math.exp(x) * (xn - x + 0.5 * dt)
        if xn >= BARRIER:
            t = (k - 0.5) * dt if bridge else k * dt
            return t, xn, gain
        if bridge:
            e = 2.0 * (BARRIER - x) * (BARRIER - xn) / dt
            if e < 40.0:
                p = math.exp(-e)
                # uniforms are >= 2^-53, so p <= 2^-53 can never trigger a hit
                if p > tiny and _uniform(bkey, np.uint64(k)) < p:
                    return (k - 0.5) * dt, xn, gain
        x = xn
    return -1.0, x, gain


@nb.njit(parallel=True, cache=True)
def _simulate(seed, n, dt, nmax, bridge, track_gain):
    times = np.empty(n)
    xs = np.empty(n)
    gains = np.empty(n)
    for i in nb.prange(n):
        t, xh, g = _one_path(seed, i, dt, nmax, bridge, track_gain)
        times[i] = t
        xs[i] = xh
        gains[i] = g
    return times, xs, gains


def set_threads(threads: int | None) -> int:
    """Apply a thread count (0 or None = auto, TCMV_THREADS if set)."""
    if threads is None or threads == 0:
        env = os.environ.get("TCMV_THREADS", "")
        threads = int(env) if env.strip() else 0
    if threads <= 0:
        threads = nb.config.NUMBA_NUM_THREADS
    threads = max(1, min(int(threads), nb.config.NUMBA_NUM_THREADS))
    nb.set_num_threads(threads)
    return threads


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCConfig:
    n_paths: int
    dt: float
    seed: int
    bridge_correction: bool = True
    t_cap: float = 100.0

    def __post_init__(self):
        if not isinstance(self.n_paths, (int, np.integer)) or self.n_paths < 1:
            raise ConfigError("n_paths must be an integer >= 1")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError("dt must be > 0")
        if not (math.isfinite(self.t_cap) and self.t_cap > 0):
            raise ConfigError("t_cap must be > 0")
        if self.dt > self.t_cap:
            raise ConfigError("dt must not exceed t_cap")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an integer in [0, 2^64)")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_cap / self.dt)))


@dataclass
class PathSample:
    config: MCConfig
    hit_time: np.ndarray  # -1 where the path did not hit before t_cap
    x_at_hit: np.ndarray
    gain: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.hit_time >= 0.0


def simulate_paths(mc: MCConfig, threads: int | None = None, track_gain: bool = False) -> PathSample:
    """Hit times and grid values at the hit; ``gain`` is the Euler sum of E(S) dS if tracked."""
    set_threads(threads)
    t, x, g = _simulate(np.uint64(mc.seed), int(mc.n_paths), float(mc.dt), mc.n_steps,
                        bool(mc.bridge_correction), bool(track_gain))
    return PathSample(mc, t, x, g)


@dataclass
class MomentReport:
    estimates: dict
    std_errors: dict
    oracle: dict
    z_scores: dict
    relative_errors: dict
    hit_fraction: float
    n_hit: int
    config: dict
    flags: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "estimates": self.estimates, "std_errors": self.std_errors, "oracle": self.oracle,
            "z_scores": self.z_scores, "relative_errors": self.relative_errors,
            "hit_fraction": self.hit_fraction, "n_hit": self.n_hit, "config": self.config,
            "flags": self.flags, "warnings": self.warnings,
        }


def moment_report(sample: PathSample) -> MomentReport:
    mc = sample.config
    s = sample.hit_time[sample.hit]
    n = int(s.size)
    frac = n / mc.n_paths
    names = ("E[sigma]", "E[sigma^2]", "E[sigma^4]")
    oracle = dict(zip(names, oracle_moments()))
    est, se, z, rel = {}, {}, {}, {}
    flags, warns = [], []
    for name, power in zip(names, (1, 2, 4)):
        v = s ** power
        m = float(np.mean(v)) if n else math.nan
        sd = float(np.std(v, ddof=1)) if n > 1 else math.inf
        err = sd / math.sqrt(n) if n > 1 else math.inf
        if n > 1 and err == 0.0:
            err = math.inf
        est[name], se[name] = m, err
        z[name] = (m - oracle[name]) / err if math.isfinite(err) else 0.0
        rel[name] = (m - oracle[name]) / oracle[name]
    if n < 2:
        flags.append("degenerate-sample: standard errors are infinite")
    if frac < 1.0 - 1e-6:
        msg = f"hit fraction {frac!r} < 1 - 1e-6: t_cap={mc.t_cap!r} truncates the law of sigma"
        warns.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    cfg = {"n_paths": int(mc.n_paths), "dt": mc.dt, "seed": int(mc.seed),
           "bridge_correction": bool(mc.bridge_correction), "t_cap": mc.t_cap}
    return MomentReport(est, se, oracle, z, rel, frac, n, cfg, flags, warns)


def simulate_sigma(mc: MCConfig, threads: int | None = None) -> MomentReport:
    return moment_report(simulate_paths(mc, threads))


def identity_report(sample: PathSample) -> dict:
    """Deviations of E(-W)_sigma from 1/2, E(S)_sigma from 2 and the gains of E(S) from 1."""
    h = sample.hit
    t = sample.hit_time[h]
    x = sample.x_at_hit[h]
    # the barrier value X = log 2 makes both identities exact
    exact_neg = np.exp(-np.full_like(x, BARRIER))
    exact_pos = np.exp(np.full_like(x, BARRIER))
    grid_neg = np.exp(-x)
    grid_pos = np.exp(x)
    return {
        "n_hit": int(h.sum()),
        "exact_barrier_max_dev_E(-W)": float(np.max(np.abs(exact_neg - 0.5), initial=0.0)),
        "exact_barrier_max_dev_E(S)": float(np.max(np.abs(exact_pos - 2.0), initial=0.0)),
        "grid_mean_abs_dev_E(-W)": float(np.mean(np.abs(grid_neg - 0.5))) if t.size else math.nan,
        "grid_mean_abs_dev_E(S)": float(np.mean(np.abs(grid_pos - 2.0))) if t.size else math.nan,
        "wealth_E(S)_minus_1_mean": float(np.mean(grid_pos - 1.0)) if t.size else math.nan,
        "gains_mean_abs_dev_from_1": float(np.mean(np.abs(sample.gain[h] - 1.0))) if t.size else math.nan,
    }


def verify_identities(mc: MCConfig, threads: int | None = None, dts=None) -> dict:
    """Identity deviations for ``mc`` and, by default, the same seed at 10x coarser dt."""
    dts = [mc.dt * 10.0, mc.dt] if dts is None else list(dts)
    rows = []
    for dt in dts:
        cfg = MCConfig(mc.n_paths, dt, mc.seed, mc.bridge_correction, mc.t_cap)
        rows.append({"dt": dt, **identity_report(simulate_paths(cfg, threads, track_gain=True))})
    key = "grid_mean_abs_dev_E(-W)"
    decays = all(rows[i + 1][key] < rows[i][key] for i in range(len(rows) - 1))
    return {"runs": rows, "deviation_decays_with_dt": decays}
