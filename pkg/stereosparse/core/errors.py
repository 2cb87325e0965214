class StereoSparseError(Exception):
    """Base exception for stereosparse."""
    pass

class ShapeError(StereoSparseError):
    """Raised when tensor shapes are incompatible."""
    pass

class DomainError(StereoSparseError):
    """Raised when an argument lies outside an operation's domain."""
    pass

class ConfigurationError(StereoSparseError):
    """Raised when a configuration is inconsistent."""
    pass

class NonFiniteError(StereoSparseError):
    """Raised when an operation produces NaN or Inf values."""
    pass
