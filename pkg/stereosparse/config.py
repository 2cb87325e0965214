import os
from typing import Dict, Any

from dotenv import load_dotenv

load_dotenv()

class Config:
    """Process-level configuration for stereosparse."""
    def __init__(self, **kwargs):
        """Initialize configuration from keyword arguments, then the environment."""
        self.LOG_LEVEL = kwargs.get('LOG_LEVEL') or os.getenv('STEREOSPARSE_LOG_LEVEL', 'INFO')
        self.LOG_FILE = kwargs.get('LOG_FILE') or os.getenv('STEREOSPARSE_LOG_FILE') or None
        self.DEBUG = kwargs.get('DEBUG') or os.getenv('STEREOSPARSE_DEBUG', 'false').lower() == 'true'

        try:
            self.WORKERS = int(kwargs.get('WORKERS') or os.getenv('STEREOSPARSE_WORKERS', '1'))
        except ValueError:
            raise ValueError("WORKERS must be a valid integer")
        try:
            self.SEED = int(kwargs.get('SEED') or os.getenv('STEREOSPARSE_SEED', '1'))
        except ValueError:
            raise ValueError("SEED must be a valid integer")
        if self.WORKERS < 1:
            raise ValueError("WORKERS must be at least 1")

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> 'Config':
        """Create configuration from dictionary."""
        return cls(**config_dict)

config = Config()
