"""Paravirtualized RAN front-end analog: sliced protocol stacks sharing one simulated SDR."""

__version__ = "0.1.0"
