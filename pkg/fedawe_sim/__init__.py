"""
fedawe_sim - federated learning under heterogeneous, non-stationary client availability

Seedable simulator for FedAWE (adaptive innovation echoing + implicit gossiping)
and the FedAvg / MIFA baselines, with the availability dynamics, mixing-matrix
tools and analysis diagnostics needed to check the method's identities and
bounds on small problems.
"""

__version__ = "1.0.0"
