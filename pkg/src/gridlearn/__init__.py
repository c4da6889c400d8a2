"""AC optimal power flow toolkit: network model, Newton power flow,
interior-point OPF, geographic load assignment, scenario synthesis and a
feasibility-aware neural dispatch predictor."""

__version__ = "0.1.0"
