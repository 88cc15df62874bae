__skc_version__ = "0.3.1"
