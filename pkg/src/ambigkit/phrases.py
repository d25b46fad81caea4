"""Canonical clarification phrases and detection markers.

Both lists are frozen verbatim; changing them silently changes labels,
detection, and every downstream metric.
"""

from __future__ import annotations

# The six canonical fixed clarification requests used as training labels.
# Kept byte-for-byte as stipulated, including the "questions is" wording of
# the first entry.
FIXED_CLARIFICATIONS: tuple[str, ...] = (
    "The questions is ambiguous.",
    "Please clarify your question.",
    "Your question is ambiguous.",
    "Can you clarify your question?",
    "Your question is not clear.",
    "Can you clarify your question please?",
)

# Thirteen distinct markers whose presence (case-insensitive substring)
# counts an output as a clarification request.
AMBIGUITY_MARKERS: tuple[str, ...] = (
    "ambiguous",
    "ambig",
    "unclear",
    "not clear",
    "not sure",
    "confused",
    "confusing",
    "vague",
    "uncertain",
    "doubtful",
    "doubt",
    "questionable",
    "clarify",
)
