"""Length-generalization lab for positional encodings in code completion.

Trains small encoder-decoder transformers with sinusoidal, xPOS, ALiBi or
T5 relative-bias positions on length-bucketed completion tasks, then scores
every (scheme, training bucket, test bucket) cell and renders the matrix.
"""

__version__ = "0.1.0"
