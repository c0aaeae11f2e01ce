"""UI package initialization."""
