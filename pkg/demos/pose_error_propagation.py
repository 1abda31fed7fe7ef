"""How a biased map pulls the pose estimate, and how well the linear prediction holds.

A camera observes points whose map positions are displaced by a random
amount with a non-zero mean. One Gauss-Newton step from the true pose lands
somewhere else; averaged over many draws, that displacement is what
``expected_pose_error`` predicts from the mean map bias alone.

Run: python demos/pose_error_propagation.py
"""

import numpy as np

from biascorrect import BiasBundle, expected_pose_error
from biascorrect.sim import monte_carlo_pose_error
from biascorrect.validation import POSE_FIXTURES, pose_fixture

np.set_printoptions(precision=5, suppress=True)

for seed, n in POSE_FIXTURES:
    fx = pose_fixture(seed, n)
    bundle = BiasBundle(np.array(fx.system.point_ids), fx.bias_mean, np.zeros(n), True)

    # the closed form needs only the Jacobians and the mean bias
    predicted = expected_pose_error(fx.system, bundle)

    # the Monte Carlo samples map and pixel errors and takes real solver steps
    mc = monte_carlo_pose_error(fx.system, fx.bias_mean, fx.bias_cov, fx.noise_sigma2, n_trials=20_000, seed=seed)

    print(f"--- {n} points ---")
    print("predicted [w, v]:", predicted)
    print("empirical [w, v]:", mc.mean)
    print("difference / SE :", (mc.mean - predicted) / mc.se)

# Doubling every bias doubles the predicted error: the map shapes the error linearly.
fx = pose_fixture(1, 40)
b = BiasBundle(np.array(fx.system.point_ids), fx.bias_mean, np.zeros(40), True)
ratio = expected_pose_error(fx.system, b.scaled(2.0)) / expected_pose_error(fx.system, b)
print("\nscaling the bias by 2 scales each component by", ratio)
