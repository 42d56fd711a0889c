"""Multi-agent RL environment bindings for the medfleet delivery simulator."""

from .parallel import ParallelEnv, env_reset, env_step

__version__ = "0.1.0"

__all__ = ["ParallelEnv", "env_reset", "env_step", "__version__"]
