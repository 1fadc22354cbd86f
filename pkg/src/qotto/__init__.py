"""Two-level quantum Otto engine with thermal Lindblad baths and a
microscopically grounded dephasing environment: simulation with a per-channel
energy ledger, power/efficiency accounting, closed-form analysis, and a
chain-mapping cross-validation of the environment energy."""

__version__ = "0.1.0"
