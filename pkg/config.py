import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Malformed numeric settings; reported by validate_config
_ENV_ERRORS: list[str] = []


def _env_number(name: str, default, kind=int):
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return kind(raw)
    except ValueError:
        _ENV_ERRORS.append(f"{name} must be {'an integer' if kind is int else 'a number'}, got '{raw}'.")
        return default


# Logging
LOG_LEVEL = os.getenv("SKEWDIFF_LOG_LEVEL", "INFO").upper()
LOG_FILE = Path(os.environ["SKEWDIFF_LOG_FILE"]) if os.getenv("SKEWDIFF_LOG_FILE") else None

# Worker cap; results never depend on it
THREADS = _env_number("SKEWDIFF_THREADS", os.cpu_count() or 1)

# Monte Carlo settings
NORMAL_SAMPLER = os.getenv("SKEWDIFF_NORMAL_SAMPLER", "inverse-cdf").lower()
BLOCK_SIZE = _env_number("SKEWDIFF_BLOCK_SIZE", 65536)
DEFAULT_PATHS = 1_000_000

# Oracle quadrature
ORACLE_TOL = _env_number("SKEWDIFF_ORACLE_TOL", 1e-10, float)
ORACLE_LIMIT = 200

# Problem defaults
DEFAULT_D_MINUS = 1.0
DEFAULT_FINAL_TIME = 0.2
MIN_HALF_WIDTH = 10.0
GAUSS_ORDER = 8

# Error measurement
ERROR_WINDOW = (-5.0, 5.0)
SDE_POINTS = (-1.5, 0.0, 2.5)
IFEM_LADDER = (0.2, 0.1, 0.05, 0.025)
SDE_LADDER_EXPONENTS = (4, 5, 6, 7, 8, 9)

# Crank-Nicolson steps replaced by backward Euler half-steps in studies
CN_STARTUP_STEPS = 2

# Monte Carlo errors within this many standard errors count as noise
NOISE_SIGMAS = 3.0

SUPPORTED_SAMPLERS = ("inverse-cdf", "box-muller")


def validate_config():
    if _ENV_ERRORS:
        raise ValueError(_ENV_ERRORS[0])
    if THREADS < 1:
        raise ValueError("SKEWDIFF_THREADS must be at least 1.")
    if NORMAL_SAMPLER not in SUPPORTED_SAMPLERS:
        raise ValueError(
            f"SKEWDIFF_NORMAL_SAMPLER must be one of {SUPPORTED_SAMPLERS}, got '{NORMAL_SAMPLER}'."
        )
    if BLOCK_SIZE < 1:
        raise ValueError("SKEWDIFF_BLOCK_SIZE must be positive.")
    if ORACLE_TOL <= 0:
        raise ValueError("SKEWDIFF_ORACLE_TOL must be positive.")


# Lambda choices used by the presets; resolved against D+ and D- later
LAMBDA_TOKENS = {
    "half": "lambda-sharp",
    "star": "lambda-star",
}

METHOD_TOKENS = {
    "be": "ifem-be",
    "cn": "ifem-cn",
    "sde": "sde-em",
}


def _build_presets() -> dict[str, dict]:
    presets = {}
    for method_key, method in METHOD_TOKENS.items():
        for d_plus in (10.0, 100.0):
            for lam_key, lam_token in LAMBDA_TOKENS.items():
                name = f"{method_key}-d{int(d_plus)}-{lam_key}"
                presets[name] = {
                    "method": method,
                    "d_plus": d_plus,
                    "d_minus": DEFAULT_D_MINUS,
                    "lambda": lam_token,
                    "final_time": DEFAULT_FINAL_TIME,
                }
    return presets


PRESETS = _build_presets()

PRESET_GROUPS = {
    "ifem-be": [name for name in PRESETS if name.startswith("be-")],
    "ifem-cn": [name for name in PRESETS if name.startswith("cn-")],
    "sde-em": [name for name in PRESETS if name.startswith("sde-")],
}
PRESET_GROUPS["all"] = PRESET_GROUPS["ifem-be"] + PRESET_GROUPS["ifem-cn"] + PRESET_GROUPS["sde-em"]


def get_preset(name: str) -> list[dict]:
    """Resolve a preset or preset group name to a list of parameter dicts."""
    key = name.lower()
    if key in PRESET_GROUPS:
        return [dict(PRESETS[n], name=n) for n in PRESET_GROUPS[key]]
    if key in PRESETS:
        return [dict(PRESETS[key], name=key)]
    raise KeyError(f"Unknown preset '{name}'")


def get_sde_ladder(final_time: float = DEFAULT_FINAL_TIME) -> tuple[float, ...]:
    return tuple(final_time / 2**k for k in SDE_LADDER_EXPONENTS)
