"""Multi-band NTN simulator with rain sensing, broker-relayed matching and
proportional-fair beam hopping."""

__version__ = "0.1.0"
