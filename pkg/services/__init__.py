"""Experiment services behind the command line"""
