"""Built-in experiments."""

from .config import ExperimentConfig

_LINE_X1_ZERO = {"kind": "sqdist", "set": "affine", "point": (0.0, 0.0),
                 "directions": ((0.0, 1.0),), "weight": 0.5}
_TIKHONOV_23 = {"kind": "tikhonov", "center": (2.0, 3.0), "weight": 0.5}
_POWER_075 = {"kind": "power", "alpha": 0.75, "scale": 1.0}


def _cfg(name, description, problem, phi, psi, schedule, tolerances, mode="standard", **extra):
    return ExperimentConfig(name=name, mode=mode, seed=0, problem=problem, phi=phi, psi=psi,
                            schedule=schedule, tolerances=tolerances, output={},
                            extra={"description": description, **extra})


def registry():
    return [
        _cfg("hbf-reduction",
             "psi = 0: heavy ball with friction converges to a point of argmin phi",
             {"gamma": 1.0, "x0": (1.0, 1.0), "v0": (0.5, -0.3), "horizon": 200.0},
             _LINE_X1_ZERO, {"kind": "zero", "dim": 2}, _POWER_075,
             {"membership": 1e-6, "speed": 1e-6, "limit_prediction": 1e-6,
              "identity_atol": 1e-300, "expect_admissible": True}),
        _cfg("tikhonov-selection",
             "psi = |x - a|^2/2 selects the point of argmin phi closest to a",
             {"gamma": 1.0, "x0": (1.0, 1.0), "v0": (0.0, 0.0), "horizon": 1e4},
             _LINE_X1_ZERO, _TIKHONOV_23, _POWER_075,
             {"x_distance": 5e-2, "tail_monotone": True, "expect_admissible": True}),
        _cfg("fast-eps-anti",
             "eps = (1+t)^-2 decays too fast: the limit ignores psi",
             {"gamma": 1.0, "x0": (5.0, 5.0), "v0": (0.0, 0.0), "horizon": 1e4},
             _LINE_X1_ZERO, _TIKHONOV_23, {"kind": "power", "alpha": 2.0, "scale": 1.0},
             {"membership": 1e-4, "anti_psi_margin": 5e-2, "expect_admissible": False},
             mode="anti-selection"),
        _cfg("coupled-oscillators",
             "two oscillators attracted to [0,1] and [2,3], weakly coupled by (x1 - x2)^2/2",
             {"gamma": 1.0, "x0": (0.0, 0.0), "v0": (0.0, 0.0), "horizon": 1e4},
             {"kind": "sqdist-intervals", "lo": (0.0, 2.0), "hi": (1.0, 3.0), "weight": 0.5},
             {"kind": "coupling", "L1": ((1.0,),), "L2": ((1.0,),), "block1": (0,), "block2": (1,)},
             _POWER_075,
             {"x_distance": 5e-2, "expect_admissible": True}),
        _cfg("neumann-waves-1d",
             "two damped Neumann waves on 64 nodes, coupled by |u1 - u2|^2/2: limits share a mean",
             {"gamma": 1.0, "x0": (1.0,) * 64 + (-0.5,) * 64, "v0": (0.0,) * 128, "horizon": 1e4,
              "method": "fixed-RK4", "h0": 0.025},
             {"kind": "neumann-waves", "n": 64, "alpha1": 1024.0, "alpha2": 2048.0,
              "profile1": "sin", "profile2": "cos", "amplitude1": 4.0, "amplitude2": 2.0},
             {"kind": "wave-coupling", "n": 64}, _POWER_075,
             {"mean_gap": 1e-3, "profile_error": 1e-2, "expect_admissible": True}),
        _cfg("dictionary-roundtrip",
             "a solution reparametrized by t_eps solves the beta-form system, and back",
             {"gamma": 1.0, "x0": (1.0, 1.0), "v0": (0.0, 0.0), "horizon": 20.0,
              "rtol": 1e-12, "atol": 1e-14},
             _LINE_X1_ZERO, _TIKHONOV_23, {"kind": "power", "alpha": 1.0, "scale": 4.0},
             {"beta_residual": 5e-4, "roundtrip": 1e-8, "expect_admissible": True},
             mode="dictionary"),
        _cfg("affine-rescale",
             "y(t) = x(2t) solves the rescaled system with the same condition verdicts",
             {"gamma": 1.0, "x0": (1.0, 1.0), "v0": (0.0, 0.0), "horizon": 50.0,
              "rtol": 1e-12, "atol": 1e-14},
             _LINE_X1_ZERO, _TIKHONOV_23, _POWER_075,
             {"rescaled_residual": 1e-4, "expect_admissible": True},
             mode="affine-rescale", rescale_factor=2.0),
    ]


def names():
    return [c.name for c in registry()]


def get(name):
    for cfg in registry():
        if cfg.name == name:
            return cfg
    raise KeyError(f"unknown experiment {name!r}; available: {', '.join(names())}")
