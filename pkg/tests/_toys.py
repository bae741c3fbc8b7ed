"""Synthetic constructions shared between module tests and the acceptance suite."""

import numpy as np
import pandas as pd


def flipped_spurious_table(seed, n=2000, rhos=(1.0, -0.3, 0.5), scales=(1.0, 1.3, 0.8),
                           y_noise=0.5, x2_noise=0.1):
    """Environments where a spurious feature's correlation with the target flips.

    x1 causes y with a unit coefficient in every environment; x2 is an effect
    of y whose strength and sign vary by environment.  Environment-specific
    x1 scales keep the empty predictor set non-invariant.
    """
    rng = np.random.default_rng(seed)
    frames = []
    for env, (rho, s) in enumerate(zip(rhos, scales), start=1):
        x1 = s * rng.standard_normal(n)
        y = x1 + y_noise * rng.standard_normal(n)
        x2 = rho * y + x2_noise * rng.standard_normal(n)
        frames.append(pd.DataFrame({"x1": x1, "x2": x2, "y": y, "env": env}))
    return pd.concat(frames, ignore_index=True)


def flipped_holdout_table(seed, n=2000, rho=-0.8, scale=1.0, y_noise=0.5, x2_noise=0.1):
    """A deployment environment whose spurious correlation is flipped."""
    frame = flipped_spurious_table(seed, n=n, rhos=(rho,), scales=(scale,),
                                   y_noise=y_noise, x2_noise=x2_noise)
    frame["env"] = 99
    return frame


def linear_cate_table(seed, n=10_000, tau_slope=3.0):
    """Outcome y = 2 + x + tau(x) * t + noise with tau(x) = tau_slope * x."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    t = rng.integers(0, 2, n).astype(float)
    y = 2.0 + x + tau_slope * x * t + 0.5 * rng.standard_normal(n)
    return pd.DataFrame({"x": x, "t": t, "y": y})


def logistic_irls(x, y, iters=100, ridge=1e-8):
    """Plain Newton / IRLS logistic regression; reference baseline."""
    x = np.column_stack([np.ones(len(x)), x])
    beta = np.zeros(x.shape[1])
    for _ in range(iters):
        eta = x @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.clip(p * (1.0 - p), 1e-10, None)
        z = eta + (y - p) / w
        wx = x * w[:, None]
        beta_new = np.linalg.solve(x.T @ wx + ridge * np.eye(x.shape[1]), x.T @ (w * z))
        if np.max(np.abs(beta_new - beta)) < 1e-10:
            beta = beta_new
            break
        beta = beta_new
    def predict(xq):
        xq = np.column_stack([np.ones(len(xq)), xq])
        return 1.0 / (1.0 + np.exp(-(xq @ beta)))
    return predict
