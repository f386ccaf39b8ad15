"""Synthetic BEV world: scenes, ray-cast observation, strategies, scoring and rounds"""
