import os
from pathlib import Path

# Try to load environment variables from .env file
try:
    from dotenv import load_dotenv
    # Look for .env file in the project root directory
    env_path = Path(__file__).resolve().parent.parent.parent / '.env'
    if env_path.exists():
        load_dotenv(dotenv_path=env_path)
except ImportError:
    # Continue without dotenv - will use os.environ or defaults
    pass

# Base directories
BASE_DIR = Path(__file__).resolve().parent.parent.parent
SRC_DIR = BASE_DIR / "src"


def _env_float(name, default):
    return float(os.getenv(name, repr(float(default))))


def _env_int(name, default):
    return int(os.getenv(name, str(int(default))))


# Finite-difference marching of the representation PDEs
SOLVER = {
    "theta": _env_float("BSVIE_THETA", 1.0),  # 1.0 implicit Euler, 0.5 Crank-Nicolson
    "source_scheme": os.getenv("BSVIE_SOURCE_SCHEME", "lagged"),  # lagged | heun
    "horizon": _env_float("BSVIE_HORIZON", 1.0),
    "time_steps": _env_int("BSVIE_TIME_STEPS", 200),
    "space_points": _env_int("BSVIE_SPACE_POINTS", 401),
    "radius": _env_float("BSVIE_RADIUS", 8.0),
    "residual_floor": 1e-12,  # residuals below this count as exact
}

# Windowed Picard iteration (constant coefficients)
PICARD = {
    "tol": _env_float("BSVIE_PICARD_TOL", 1e-8),
    "max_iter": _env_int("BSVIE_PICARD_MAX_ITER", 200),
    "ratio_threshold": 0.5,
    "max_halvings": _env_int("BSVIE_PICARD_MAX_HALVINGS", 10),
}

# Outer coupling loop for Type-II systems
TYPE2 = {
    "tol": _env_float("BSVIE_TYPE2_TOL", 1e-6),
    "max_iter": _env_int("BSVIE_TYPE2_MAX_ITER", 50),
    "gamma_backend": os.getenv("BSVIE_GAMMA_BACKEND", "fd"),  # fd | kernel
    # full (t, s, ξ, x) storage caps the oracle grid
    "oracle_time_steps": _env_int("BSVIE_TYPE2_ORACLE_STEPS", 40),
    "oracle_space_points": _env_int("BSVIE_TYPE2_ORACLE_POINTS", 81),
}

# Forward path simulation
SIMULATION = {
    "n_paths": _env_int("BSVIE_PATHS", 10000),
    "seed": _env_int("BSVIE_SEED", 20240601),
    "antithetic": os.getenv("BSVIE_ANTITHETIC", "false").lower() == "true",
    "max_excluded_fraction": 1e-3,
}

# Gaussian kernel quadrature
KERNEL = {
    "legendre_nodes": _env_int("BSVIE_LEGENDRE_NODES", 48),
    "hermite_nodes": _env_int("BSVIE_HERMITE_NODES", 40),
    "tail_sigmas": 6.0,
    "bound_sweep_points": 121,
}

# Sampling-based coefficient validation
VALIDATION = {
    "sample_count": _env_int("BSVIE_VALIDATION_SAMPLES", 10000),
    "eps_check": 1e-2,
    "fd_step": 1e-5,
    "state_box": 4.0,
    "value_box": 4.0,
}

# Discrete Holder diagnostics
HOLDER = {
    "alpha": _env_float("BSVIE_HOLDER_ALPHA", 0.5),
    "y_exponent": 1.5,
    "max_space_distance": 1.0,
    "slope_roundoff": 1e-9,  # float noise of an exact fitted slope
}

# Output locations
OUTPUT = {
    "directory": os.getenv("BSVIE_OUTPUT_DIR", str(BASE_DIR / "runs")),
    "float_format": "%.12g",
}

LOGGING = {
    "level": os.getenv("BSVIE_LOG_LEVEL", "INFO"),
    "directory": os.getenv("BSVIE_LOG_DIR", str(BASE_DIR / "logs")),
}

EXIT_CODES = {
    "pass": 0,
    "verification_failure": 1,
    "config_error": 2,
    "numerical_failure": 3,
}
