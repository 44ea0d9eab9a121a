"""
Run configuration: plain `key = value` files read with dotenv_values, typed accessors and
JSON round-tripping for the run manifest.
"""
import json
import logging
import os

from dotenv import dotenv_values

from kinetic_barrier.errors import ConfigError

DEFAULTS: dict[str, str] = {
    # kernel
    "d": "2",
    "gamma": "0.5",
    "s": "0.3",
    "btilde_lo": "1",
    "btilde_hi": "1",
    # grid
    "r_max": "8",
    "n_per_axis": "32",
    "interpolation": "multilinear",
    "tail": "zero",
    "tail.q": "",
    # fixture
    "fixture": "maxwellian",
    "fixture.mass": "1",
    "fixture.temperature": "1",
    # hydrodynamic bounds
    "hydro.m0": "0.5",
    "hydro.M0": "2",
    "hydro.E0": "4",
    "hydro.H0": "4",
    # barrier
    "barrier.form": "plain",
    "barrier.q": "3",
    "barrier.n0": "1",
    "barrier.schedule": "constant",
    "barrier.beta": "",
    "barrier.eps0": "0",
    "barrier.eps_kind": "constant",
    "barrier.eps_rate": "0",
    "barrier.eta": "0.5",
    "barrier.q0": "",
    # operator
    "theta_min": "0.1",
    "n_theta": "16",
    "pv.mode": "symmetric_pairing",
    "pv.r": "",
    # solver
    "solver.dt": "auto",
    "solver.t_end": "1",
    "solver.stepper": "explicit_euler",
    "solver.clip_negative": "true",
    "solver.stability_factor": "0.2",
    "solver.conservative_projection": "true",
    "solver.snapshot_times": "",
    "solver.moment_orders": "",
    # verifier
    "verify.radius_rule": "core",
    "verify.c_r": "2",
    "verify.v_norms": "8,16,32,64",
    "verify.q_values": "",
    "verify.samples": "1",
    "verify.time": "1",
    "verify.theta_min": "0",
    "verify.strict_slopes": "false",
    # run
    "threads": "",
    "seed": "",
    "output_dir": "",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class Settings:
    """
    A run configuration: defaults overlaid with the keys of a config file.

    Unknown keys are rejected so typos surface as configuration errors.
    """

    def __init__(self, values: dict | None = None, from_json=None):
        self.values = dict(DEFAULTS)
        if values:
            self.update(values)
        if from_json:
            self.from_json(from_json)

    def update(self, values: dict) -> None:
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        for key, value in values.items():
            if value is None:
                raise ConfigError(f"configuration key {key!r} has no value")
            self.values[key] = str(value).strip()

    @classmethod
    def load(cls, path) -> "Settings":
        """
        Raises:
            ConfigError: When the file is missing or holds unknown keys.
        """
        if not os.path.isfile(path):
            raise ConfigError(f"configuration file not found: {path}")
        logging.info(f"App: Loading run configuration from {path}")
        return cls(dotenv_values(path))

    # --- Typed access ---

    def raw(self, key: str) -> str:
        return self.values[key]

    def is_set(self, key: str) -> bool:
        return self.values[key] != ""

    def get_str(self, key: str) -> str:
        return self.values[key]

    def get_float(self, key: str, default: float | None = None) -> float:
        value = self.values[key]
        if value == "" and default is not None:
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {value!r}") from None

    def get_int(self, key: str, default: int | None = None) -> int:
        value = self.values[key]
        if value == "" and default is not None:
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {value!r}") from None

    def get_bool(self, key: str) -> bool:
        value = self.values[key].lower()
        if value in _TRUE:
            return True
        if value in _FALSE:
            return False
        raise ConfigError(f"{key} must be a boolean, got {value!r}")

    def get_floats(self, key: str) -> tuple[float, ...]:
        value = self.values[key]
        if value == "":
            return ()
        try:
            return tuple(float(item) for item in value.split(",") if item.strip())
        except ValueError:
            raise ConfigError(f"{key} must be a comma separated list of numbers, got {value!r}") from None

    # --- Serialization ---

    def to_dict(self) -> dict:
        return dict(self.values)

    def save(self, path):
        settings_json = json.dumps(self.values, indent=2)
        if os.path.isabs(path):
            save_path = path
        else:
            directory = os.getcwd()
            save_path = os.path.join(directory, path)
        with open(save_path, "w") as file:
            file.write(settings_json)

    def from_json(self, path):
        with open(path, "r") as f:
            settings_json = f.read()
        self.values = dict(DEFAULTS)
        self.update(json.loads(settings_json))
