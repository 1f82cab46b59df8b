"""Class-based factorized transducer (C-FNT) decoding at toy scale.

The package covers the vocabulary and file formats (``core``), emission
scoring (``scoring``), the name trie, the alignment lattice and losses,
FNT / C-FNT decoders, evaluation metrics, a seeded toy corpus generator and
a command-line front end.
"""

__version__ = "0.1.0"
