"""Random condensed QP instances shared by the MPC tests."""

import numpy as np

from koopman_auv.edmd import LiftedModel
from koopman_auv.lifting import make_dictionary
from koopman_auv.mpc import KoopmanMPC, MpcConfig


def random_model(rng, n_rbf=2):
    d = make_dictionary(n_rbf=n_rbf, seed=int(rng.integers(1 << 31)))
    N = d.n_lifted
    A = rng.normal(size=(N, N))
    A *= rng.uniform(0.5, 1.05) / max(abs(np.linalg.eigvals(A)))
    B = rng.normal(size=(N, 1))
    return LiftedModel(dictionary=d, a=A, b=B)


def random_controller(rng, horizon=None, state_box=True):
    horizon = int(rng.integers(1, 4)) if horizon is None else horizon
    u_max = rng.uniform(0.2, 2.0)
    du_max = rng.uniform(0.05, 1.0)
    if state_box:
        x_lo, x_hi = -rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)
    else:
        x_lo, x_hi = -np.inf, np.inf
    cfg = MpcConfig(q_u=rng.uniform(0.1, 10), q_n=rng.uniform(0.1, 10), r=rng.uniform(0.01, 1),
                    horizon=horizon, u_min=-u_max, u_max=u_max, du_min=-du_max, du_max=du_max,
                    x_min=x_lo, x_max=x_hi)
    return KoopmanMPC(random_model(rng), cfg, u_prev=rng.uniform(-u_max, u_max))


def random_qp(rng, state_box=True):
    ctrl = random_controller(rng, state_box=state_box)
    x = rng.uniform(-0.5, 0.5)
    ref = rng.uniform(-3, 3, ctrl.config.horizon + 1)
    return ctrl.build_qp(x, ref)
