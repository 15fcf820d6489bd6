"""Rokhlin towers, small subgroupoids and comparison checks for Cantor Z-systems."""

__version__ = "0.1.0"
