import logging
from dataclasses import dataclass

from kinetic_barrier.carleman_operator import PVPolicy, SigmaRule
from kinetic_barrier.core_model import (
    Barrier,
    BarrierForm,
    EpsSchedule,
    GridDistribution,
    HydroBounds,
    KernelParams,
    TimeSchedule,
    VelocityGrid,
    validate_params,
)
from kinetic_barrier.errors import ConfigError, OutOfRange
from kinetic_barrier.fixtures import build_fixture
from kinetic_barrier.barrier_verifier import VerificationSetup
from kinetic_barrier.homogeneous_solver import SolverConfig
from kinetic_barrier.settings import Settings
from utils import Config

SCHEDULES = ("constant", "power", "linfty")


def build_kernel_params(settings: Settings) -> KernelParams:
    params = KernelParams(
        d=settings.get_int("d"),
        gamma=settings.get_float("gamma"),
        s=settings.get_float("s"),
        btilde_lo=settings.get_float("btilde_lo"),
        btilde_hi=settings.get_float("btilde_hi"),
    )
    validated = validate_params(params)
    logging.info(f"App: Kernel d={params.d}, gamma={params.gamma}, s={params.s} ({validated.regime.value})")
    return params


def build_grid(settings: Settings) -> VelocityGrid:
    return VelocityGrid(d=settings.get_int("d"), r_max=settings.get_float("r_max"), n_per_axis=settings.get_int("n_per_axis"))


def build_distribution(settings: Settings, grid: VelocityGrid) -> GridDistribution:
    f = build_fixture(
        settings.get_str("fixture"),
        grid,
        mass=settings.get_float("fixture.mass"),
        temperature=settings.get_float("fixture.temperature"),
        interpolation=settings.get_str("interpolation"),
    )
    tail = settings.get_str("tail")
    if tail == "power_law":
        f = f.with_power_tail(settings.get_float("tail.q", settings.get_float("barrier.q")))
    elif tail != "zero":
        raise OutOfRange("tail", f"expected zero or power_law, got {tail!r}")
    return f


def build_bounds(settings: Settings) -> HydroBounds:
    return HydroBounds(
        m0=settings.get_float("hydro.m0"),
        M0=settings.get_float("hydro.M0"),
        E0=settings.get_float("hydro.E0"),
        H0=settings.get_float("hydro.H0"),
    )


def build_barrier(settings: Settings, params: KernelParams, form: str | None = None) -> Barrier:
    """
    The configured barrier; form overrides barrier.form.

    Raises:
        ConfigError: For an unknown schedule or a power schedule without barrier.beta.
    """
    n0 = settings.get_float("barrier.n0")
    schedule = settings.get_str("barrier.schedule")
    match schedule:
        case "constant":
            n_schedule = TimeSchedule.constant(n0)
        case "power":
            if not settings.is_set("barrier.beta"):
                raise ConfigError("barrier.schedule = power needs barrier.beta")
            n_schedule = TimeSchedule.power(n0, settings.get_float("barrier.beta"))
        case "linfty":
            n_schedule = TimeSchedule.linfty(n0, params.d, params.s)
        case _:
            raise ConfigError(f"barrier.schedule must be one of {SCHEDULES}, got {schedule!r}")
    try:
        barrier_form = BarrierForm(form or settings.get_str("barrier.form"))
    except ValueError:
        raise ConfigError(f"unknown barrier form {form or settings.get_str('barrier.form')!r}") from None
    return Barrier(
        q=settings.get_float("barrier.q"),
        n_schedule=n_schedule,
        form=barrier_form,
        eps_schedule=EpsSchedule(
            eps0=settings.get_float("barrier.eps0"),
            kind=settings.get_str("barrier.eps_kind"),
            rate=settings.get_float("barrier.eps_rate"),
        ),
        eta=settings.get_float("barrier.eta"),
        q0=settings.get_float("barrier.q0", params.d + 2.0),
        d=params.d,
    )


def build_pv(settings: Settings) -> PVPolicy:
    r_pv = settings.get_float("pv.r") if settings.is_set("pv.r") else None
    return PVPolicy(mode=settings.get_str("pv.mode"), r_pv=r_pv)


@dataclass
class RunContext:
    """Domain objects of one run, built once from the settings and the environment."""

    settings: Settings
    params: KernelParams
    grid: VelocityGrid
    f: GridDistribution
    bounds: HydroBounds
    pv: PVPolicy
    threads: int | None
    seed: int
    output_dir: str

    def barrier(self, form: str | None = None) -> Barrier:
        return build_barrier(self.settings, self.params, form)

    def solver_config(self) -> SolverConfig:
        s = self.settings
        dt = None if s.get_str("solver.dt") == "auto" else s.get_float("solver.dt")
        return SolverConfig(
            params=self.params,
            grid=self.grid,
            t_end=s.get_float("solver.t_end"),
            dt=dt,
            theta_min=s.get_float("theta_min"),
            stepper=s.get_str("solver.stepper"),
            clip_negative=s.get_bool("solver.clip_negative"),
            stability_factor=s.get_float("solver.stability_factor"),
            conservative_projection=s.get_bool("solver.conservative_projection"),
            sigma_rule=SigmaRule(n_theta=s.get_int("n_theta")),
            snapshot_times=s.get_floats("solver.snapshot_times"),
            moment_orders=s.get_floats("solver.moment_orders"),
            threads=self.threads,
        )

    def verification_setup(self, f: GridDistribution | None = None) -> VerificationSetup:
        s = self.settings
        barrier = self.barrier()
        return VerificationSetup(
            f=self.f if f is None else f,
            params=self.params,
            bounds=self.bounds,
            barrier=None if barrier.form is BarrierForm.PLAIN else barrier,
            n0=s.get_float("barrier.n0"),
            v_norms=s.get_floats("verify.v_norms"),
            q_values=s.get_floats("verify.q_values") or (barrier.q,),
            samples=s.get_int("verify.samples"),
            radius_rule=s.get_str("verify.radius_rule"),
            c_r=s.get_float("verify.c_r"),
            time=s.get_float("verify.time"),
            theta_min=s.get_float("verify.theta_min"),
            pv=self.pv,
            seed=self.seed,
            threads=self.threads,
            strict_slopes=s.get_bool("verify.strict_slopes"),
        )


def build_run_context(settings: Settings, config: Config) -> RunContext:
    """
    Builds kernel, grid, sample distribution and bounds from the run settings.

    KINETIC_BARRIER_THREADS wins over the file; seed and output directory fall back to the
    environment when the file leaves them empty.
    """
    logging.info("App: Initializing run context...")
    params = build_kernel_params(settings)
    grid = build_grid(settings)
    if grid.d != params.d:
        raise OutOfRange("d", f"grid and kernel dimensions differ: {grid.d} != {params.d}")
    threads = config.threads if config.threads is not None else settings.get_int("threads", 0) or None
    seed = settings.get_int("seed", config.seed)
    output_dir = settings.get_str("output_dir") or config.output_dir
    context = RunContext(
        settings=settings,
        params=params,
        grid=grid,
        f=build_distribution(settings, grid),
        bounds=build_bounds(settings),
        pv=build_pv(settings),
        threads=threads,
        seed=seed,
        output_dir=output_dir,
    )
    logging.info(f"App: Run context ready (grid {grid.n_per_axis}^{grid.d}, fixture {settings.get_str('fixture')}).")
    return context
