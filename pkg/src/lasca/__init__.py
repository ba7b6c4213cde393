"""Affect change prediction from salience-masked semantic templates.

Pipeline: windowed behavioral features are min-max normalized, split into
dominant/non-dominant groups per window, rendered as deterministic template
text through a fixed affect lexicon, embedded with a frozen text encoder,
fused with the raw features, and fed as consecutive-window differences to a
small preference head that predicts the direction of valence/arousal change.
"""

from importlib import resources

__version__ = "0.1.0"

PACKAGED_LEXICONS = {
    "facial": resources.files(__name__) / "data" / "lexicon_facial.json",
    "audio": resources.files(__name__) / "data" / "lexicon_audio.json",
}
