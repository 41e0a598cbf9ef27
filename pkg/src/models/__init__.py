"""
Data models for the P6LoWPAN codec and simulator
"""
