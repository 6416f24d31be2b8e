"""Deep dual-tower causal structure learning."""
