import logging
import os

from kinetic_barrier.errors import ConfigError

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class Config:
    """
    A class to load and store configuration variables from environment variables.
    """

    def __init__(self):
        """
        Initializes the Config object by loading environment variables.
        """
        self.threads = os.getenv("KINETIC_BARRIER_THREADS")  # None means all available cores
        self.output_dir = os.getenv("KINETIC_BARRIER_OUTPUT_DIR", "output")
        self.log_level = os.getenv("KINETIC_BARRIER_LOG_LEVEL", "INFO").upper()
        self.seed = os.getenv("KINETIC_BARRIER_SEED", "0")


def configure_logging(level: str = "INFO"):
    """
    Configures the root logger once for the whole run.
    """
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def get_config(_logging) -> Config:
    """
    Loads the configuration from environment variables and returns a validated Config object.

    Returns:
        Config: An instance of the Config class containing the loaded configuration.
    """
    _logging.info("App: Loading configuration from environment variables.")
    config = Config()

    validate_variables(_logging, config)
    config.threads = int(config.threads) if config.threads else None
    config.seed = int(config.seed)
    return config


def validate_variables(logging, config):
    """
    Validates the environment variables the command line front end reads.

    Raises:
        ConfigError: Listing every invalid variable, each also logged.
    """
    problems = []
    if config.threads:
        try:
            if int(config.threads) < 1:
                problems.append(f"KINETIC_BARRIER_THREADS must be >= 1, got {config.threads}")
        except ValueError:
            problems.append(f"KINETIC_BARRIER_THREADS must be an integer, got {config.threads!r}")
    try:
        int(config.seed)
    except ValueError:
        problems.append(f"KINETIC_BARRIER_SEED must be an integer, got {config.seed!r}")
    if config.log_level not in LOG_LEVELS:
        problems.append(f"KINETIC_BARRIER_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {config.log_level!r}")
    if not config.output_dir:
        problems.append("KINETIC_BARRIER_OUTPUT_DIR must not be empty")

    for problem in problems:
        logging.error(f"App: {problem}")
    if problems:
        raise ConfigError("; ".join(problems))
