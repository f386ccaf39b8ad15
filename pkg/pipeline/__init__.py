"""Per-agent sharing pipeline stages"""
