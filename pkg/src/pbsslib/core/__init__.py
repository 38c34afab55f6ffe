from .__base__ import SamplingGrid, WaveformBuffer, LinkSpec, SymbolFrame
from .perturbation import PerturbationKernel, KernelSettings, compute_kernel, predict_received
from .shaping import MbDistribution, SelectionConfig, solve_mb, select_sequences
from .receiver import CprConfig, MetricReport, pilot_cpr, effective_snr, air_mismatched
