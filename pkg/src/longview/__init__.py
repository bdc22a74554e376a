"""longview: four-choice question answering over very long multi-camera
recording corpora.

Two pipelines over one file-based lane database: a Search-Verify-Answer
stack with anti-confabulation validation, and a temporal knowledge
graph with a single grounded answer call. All model traffic flows
through one pluggable gateway; a synthetic harness makes every stage
testable at desk scale.
"""

__version__ = "0.1.0"
