import logging

import pytest

from evaluator_utils import build_barrier, build_kernel_params, build_run_context
from kinetic_barrier.core_model import BarrierForm
from kinetic_barrier.errors import ConfigError, OutOfRange
from kinetic_barrier.settings import DEFAULTS, Settings
from utils import get_config


def test_defaults():
    settings = Settings()
    assert settings.get_int("d") == 2
    assert settings.get_floats("verify.v_norms") == (8.0, 16.0, 32.0, 64.0)
    assert settings.get_floats("solver.moment_orders") == ()
    assert not settings.get_bool("verify.strict_slopes")


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        Settings({"gama": "0.5"})


def test_load_config_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# soft run\ngamma = -0.5\nverify.strict_slopes = yes\nsolver.snapshot_times = 0.1, 0.2\n")
    settings = Settings.load(path)
    assert settings.get_float("gamma") == -0.5
    assert settings.get_bool("verify.strict_slopes")
    assert settings.get_floats("solver.snapshot_times") == (0.1, 0.2)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        Settings.load(tmp_path / "absent.conf")


def test_typed_access_errors():
    settings = Settings({"gamma": "soft", "verify.strict_slopes": "maybe", "verify.v_norms": "8,x"})
    with pytest.raises(ConfigError):
        settings.get_float("gamma")
    with pytest.raises(ConfigError):
        settings.get_bool("verify.strict_slopes")
    with pytest.raises(ConfigError):
        settings.get_floats("verify.v_norms")


def test_empty_values_take_the_default():
    settings = Settings()
    assert not settings.is_set("tail.q")
    assert settings.get_float("tail.q", 5.0) == 5.0
    assert settings.get_int("threads", 0) == 0


def test_json_round_trip(tmp_path):
    path = tmp_path / "settings.json"
    Settings({"s": "0.7", "fixture": "bump"}).save(str(path))
    restored = Settings(from_json=path)
    assert restored.get_float("s") == 0.7
    assert restored.get_str("fixture") == "bump"
    assert restored.to_dict().keys() == DEFAULTS.keys()


# --- Run context ---


def test_kernel_params_are_validated():
    with pytest.raises(OutOfRange):
        build_kernel_params(Settings({"s": "1.5"}))


def test_barrier_from_settings():
    settings = Settings({"barrier.form": "power_corrector", "barrier.eps0": "0.1", "barrier.q": "5"})
    params = build_kernel_params(settings)
    assert build_barrier(settings, params).form is BarrierForm.POWER_CORRECTOR
    assert build_barrier(settings, params, "plain").form is BarrierForm.PLAIN
    with pytest.raises(ConfigError):
        build_barrier(Settings({"barrier.schedule": "power"}), params)
    with pytest.raises(ConfigError):
        build_barrier(settings, params, "sawtooth")


def test_run_context(monkeypatch):
    monkeypatch.setenv("KINETIC_BARRIER_THREADS", "3")
    monkeypatch.setenv("KINETIC_BARRIER_OUTPUT_DIR", "env-out")
    settings = Settings({"n_per_axis": "16", "seed": "7", "tail": "power_law"})
    ctx = build_run_context(settings, get_config(logging))
    assert ctx.threads == 3
    assert ctx.seed == 7
    assert ctx.output_dir == "env-out"
    assert ctx.f.tail.kind == "power_law"
    assert ctx.solver_config().theta_min == pytest.approx(0.1)
    assert ctx.verification_setup().q_values == (3.0,)


def test_run_context_rejects_unknown_tails():
    with pytest.raises(OutOfRange):
        build_run_context(Settings({"n_per_axis": "16", "tail": "gaussian"}), get_config(logging))
