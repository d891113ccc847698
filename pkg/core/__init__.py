"""Gait multi-task library: autodiff engine, data, MoME model and pipelines."""
