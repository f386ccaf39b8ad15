"""Shared primitives: numeric kernels, errors, logging, settings, agent contracts"""
