"""simforge: turn one RGB-D tabletop observation into a validated,
solvable pick-and-place simulation task.

The pipeline runs in stages: scene comprehension (depth to 3D boxes),
object correspondence against an asset catalog, task generation through a
chat model, test-driven refinement with a fix router, and oracle-policy
evaluation with statistical reports. Every model interaction can be
recorded to a cassette and replayed deterministically.
"""

__version__ = "0.1.0"
