"""Run configuration: every tunable in one serializable record.

Configs come from a flat key = value text file overridden by CLI flags;
each scheme accepts only its own parameter set, checked before execution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .errors import ValidationError
from .grassmann import RcgOptions
from .kernels import RbfParams
from .pooling import HingeParams

SCHEMES = ("avg", "rp", "grp", "bkrp", "ibkrp", "krpfs")

# per-scheme ordering margin defaults; the kernel poolers differ on purpose
DEFAULT_ETA = {"rp": 0.1, "grp": 0.1, "bkrp": 0.1, "ibkrp": 0.1, "krpfs": 1e-4}

# config-file / flag keys accepted by each scheme (besides the universal ones)
_POOLING_KEYS = {
    "avg": set(),
    "rp": {"eta", "lambda", "max_iters", "grad_tol"},
    "grp": {"eta", "lambda", "p", "nu", "max_iters", "grad_tol"},
    "bkrp": {"eta", "lambda", "sigma", "max_iters", "grad_tol"},
    "ibkrp": {"eta", "lambda", "C", "sigma", "max_iters", "grad_tol"},
    "krpfs": {"eta", "lambda", "sigma", "p", "nu", "max_iters", "grad_tol"},
}
_UNIVERSAL_KEYS = {"scheme", "seed", "jobs", "ma_window", "ssr",
                   "C_svm", "nystrom_fraction"}

_KEY_TO_FIELD = {
    "scheme": "scheme", "sigma": "sigma", "eta": "eta", "lambda": "lam",
    "C": "slack", "p": "p", "nu": "nu", "C_svm": "c_svm",
    "nystrom_fraction": "nystrom_fraction", "ma_window": "ma_window",
    "ssr": "ssr", "seed": "seed", "max_iters": "max_iters",
    "grad_tol": "grad_tol", "jobs": "jobs",
}


@dataclass
class RunConfig:
    scheme: str = "krpfs"
    sigma: float | None = None  # None -> median heuristic
    eta: float | None = None  # None -> per-scheme default
    lam: float = 5.0
    slack: float = 1.0
    p: int = 10
    nu: float | None = None  # None -> 1/p
    c_svm: float = 10.0
    nystrom_fraction: float | None = None
    ma_window: int = 1
    ssr: bool = False
    seed: int = 0
    max_iters: int = 300
    grad_tol: float = 1e-6
    jobs: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.sigma is not None and self.sigma <= 0:
            raise ValidationError("sigma must be positive or 'median'")
        if self.nystrom_fraction is not None and not 0.0 < self.nystrom_fraction <= 1.0:
            raise ValidationError("nystrom_fraction must lie in (0, 1]")
        if self.c_svm <= 0:
            raise ValidationError("C_svm must be positive")
        if self.p < 1:
            raise ValidationError("p must be a positive count")
        if self.nu is not None and self.nu <= 0:
            raise ValidationError("nu must be positive")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")

    @property
    def resolved_eta(self) -> float:
        if self.eta is not None:
            return self.eta
        return DEFAULT_ETA.get(self.scheme, 0.1)

    @property
    def resolved_nu(self) -> float:
        return self.nu if self.nu is not None else 1.0 / self.p

    def hinge_params(self) -> HingeParams:
        return HingeParams(eta=self.resolved_eta, lam=self.lam, slack=self.slack)

    def rbf_params(self) -> RbfParams | None:
        return RbfParams(self.sigma) if self.sigma is not None else None

    def rcg_options(self) -> RcgOptions:
        return RcgOptions(max_iters=self.max_iters, grad_tol=self.grad_tol)

    def resolved_dict(self) -> dict:
        out = asdict(self)
        out["eta"] = self.resolved_eta
        out["nu"] = self.resolved_nu
        return out

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; '#' starts a comment, blank lines ignored."""
    raw = {}
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_TO_FIELD:
            raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
        raw[key] = value
    return raw


def _coerce(key, value):
    field = _KEY_TO_FIELD[key]
    if isinstance(value, str):
        if field == "scheme":
            return value
        if field == "sigma" and value == "median":
            return None
        if field == "ssr":
            if value.lower() in ("1", "true", "on", "yes"):
                return True
            if value.lower() in ("0", "false", "off", "no"):
                return False
            raise ValidationError(f"bad boolean for ssr: {value!r}")
        try:
            if field in ("p", "seed", "max_iters", "jobs", "ma_window"):
                return int(value)
            return float(value)
        except ValueError as exc:
            raise ValidationError(f"bad value for {key}: {value!r}") from exc
    return value


def build_config(file_values: dict | None = None,
                 flag_values: dict | None = None) -> tuple[RunConfig, set]:
    """Merge config-file values and CLI flags (flags win).

    Returns the config plus the set of explicitly supplied keys, which
    validate_scheme_params later checks against the scheme.
    """
    merged: dict = {}
    explicit: set = set()
    for source in (file_values or {}), (flag_values or {}):
        for key, value in source.items():
            if value is None:
                continue
            merged[_KEY_TO_FIELD[key]] = _coerce(key, value)
            explicit.add(key)
    return RunConfig(**merged), explicit


def validate_scheme_params(cfg: RunConfig, explicit: set):
    """Reject explicitly-set parameters outside the scheme's legal set."""
    legal = _UNIVERSAL_KEYS | _POOLING_KEYS[cfg.scheme]
    bad = sorted(set(explicit) - legal - {"scheme"})
    if bad:
        raise ValidationError(
            f"parameters not accepted by scheme {cfg.scheme!r}: {', '.join(bad)}")
