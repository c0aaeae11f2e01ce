"""Commands package initialization."""
