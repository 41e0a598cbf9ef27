"""
P6LoWPAN - principled 6LoWPAN codec and interoperability simulator

IPHC/NHC compression bounded by an explicit capability spectrum, RFC 4944
fragmentation, capability discovery, and a deterministic simulator that
replays the legacy-stack interoperability failures.
"""

__version__ = "0.1.0"
