"""Deterministic simulator of federated fine-tuning for time-series forecasters."""
