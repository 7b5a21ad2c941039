"""Nursery-rhyme imitation game: pose recognition, game engine, node bus, peripherals."""

__version__ = "0.1.0"
