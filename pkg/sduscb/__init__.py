"""SD-USCB: sensing-assisted coordinated scheduling and beamforming for multi-cell ISAC."""

__version__ = "0.1.0"
