"""Per-body-part motion style transfer on a 21-joint skeleton.

Library layout:

- ``autodiff``: dense tensors with reverse-mode differentiation
- ``skeleton`` / ``bvh`` / ``features``: motion representation and parsing
- ``graph``: body-part-preserving graph hierarchy and graph convolutions
- ``network``: the style/content encoders and the style-injecting decoder
- ``training``: losses, style mixing, optimizer, parameter averaging
- ``metrics`` / ``postprocess``: evaluation and foot-contact cleanup
- ``engine`` / ``cli``: clip-level inference and the command-line surface
"""

__version__ = "0.1.0"
