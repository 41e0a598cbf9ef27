"""
Core algorithms: wire codec, capability algebra, IPHC, fragmentation,
discovery and the node simulator
"""
