"""GPU memory hierarchy simulator - core modules."""
from .config import Design, ExperimentConfig, load_config
from .engine import Partition, Simulator, partition_sweep, run_pair, run_solo
from .experiment import run_experiment, sweep
from .metrics import unfairness, weighted_speedup
from .workload import SyntheticSpec, generate, load_trace, write_trace

__all__ = ['Design', 'ExperimentConfig', 'load_config', 'Partition', 'Simulator',
           'partition_sweep', 'run_pair', 'run_solo', 'run_experiment', 'sweep',
           'unfairness', 'weighted_speedup', 'SyntheticSpec', 'generate', 'load_trace',
           'write_trace']
