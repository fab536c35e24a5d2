"""Quality-of-transmission estimation for Raman-amplified multi-band optical links.

Modules
-------
spectral
    Unit conversions, channel plans, spectral tables and fibre parameters.
raman
    Coupled Raman power equations with pump depletion and ISRS.
fitting
    Multi-exponential fits of normalised signal power profiles.
gn
    GN-model nonlinear interference: closed form and quadrature oracle.
link
    Recirculating-loop stages and state propagation.
qot
    SNR combination, 64-QAM GMI, throughput and reports.
config, cli
    Scenario files and the ``ramanqot`` command.
"""

from .fitting import ExponentialFit, fit_exponentials, fit_profiles
from .gn import (AccumulationRule, NliResult, QuadratureConfig, accumulate, nli_closed_form,
                 nli_integral)
from .link import (FibreSpan, LinkModel, LinkScenario, LinkState, Loss, LumpedAmp, Wss,
                   apply_stage, run_scenario, snapshot_spectrum)
from .qot import QotReport, combine_snr, gmi_64qam, qot_report, throughput
from .raman import (Direction, Pump, PumpSet, RamanSolverConfig, distributed_ase, on_off_gain,
                    solve_power_evolution)
from .spectral import (Channel, ChannelPlan, FibreSpec, SpectralTable, beta_coefficients,
                       uniform_plan)

__version__ = "0.1.0"

__all__ = [
    "AccumulationRule", "Channel", "ChannelPlan", "Direction", "ExponentialFit", "FibreSpan",
    "FibreSpec", "LinkModel", "LinkScenario", "LinkState", "Loss", "LumpedAmp", "NliResult",
    "Pump", "PumpSet", "QotReport", "QuadratureConfig", "RamanSolverConfig", "SpectralTable",
    "Wss", "accumulate", "apply_stage", "beta_coefficients", "combine_snr", "distributed_ase",
    "fit_exponentials", "fit_profiles", "gmi_64qam", "nli_closed_form", "nli_integral",
    "on_off_gain", "qot_report", "run_scenario", "snapshot_spectrum", "solve_power_evolution",
    "throughput", "uniform_plan",
]
