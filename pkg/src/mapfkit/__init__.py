"""mapfkit: grid MAPF environment, expert data generation, a dual-head
transformer policy/world model, map generation and benchmarks."""

__version__ = "0.1.0"
