"""reconwatch: keyword threat-intelligence scanning of surface and onion sites."""

__version__ = "0.1.0"
