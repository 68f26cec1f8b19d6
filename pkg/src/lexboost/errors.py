class LexBoostError(Exception):
    """Root of every data/contract error raised by this package."""
