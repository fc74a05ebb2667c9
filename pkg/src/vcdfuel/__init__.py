"""Virtual chassis dynamometer toolchain.

Simulates a reference powertrain over drive cycles, extracts constants and
polynomial maps into a stateless fuel model, reduces that further to a
closed-form polynomial model, post-processes real dyno logs, and validates
every model level against reference traces.
"""

__version__ = "0.1.0"
