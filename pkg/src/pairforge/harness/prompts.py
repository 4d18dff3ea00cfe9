"""The canonical forced-choice prompt, frozen and versioned.

Any wording change must bump PROMPT_VERSION; the version is stored with
every trial so logs from different prompts never mix silently.
"""

from __future__ import annotations

import base64
import string
from pathlib import Path

PROMPT_VERSION = "fc-v1"

SYSTEM_TEXT = "You are a careful analyst of multi-view geometry in photographs."

USER_TEMPLATE = """These two images show the same static scene photographed from two different viewpoints.
In the first image, some objects are tagged with letter labels. Exactly one of the labeled objects has been altered in the second image so that its pose is geometrically impossible: its appearance there cannot be explained by the camera motion between the two views. Every other object is consistent.
Valid choices: {letters}.
Decide which labeled object is the inconsistent one. You may reason as much as you like, but the final line of your reply must contain only the single letter of your answer."""


def valid_letters(num_labels: int) -> list[str]:
    if not 1 <= num_labels <= 26:
        raise ValueError(f"num_labels must be 1..26, got {num_labels}")
    return list(string.ascii_uppercase[:num_labels])


def _image_part(path: str) -> dict:
    data = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{data}"}}


def build_prompt(item) -> list[dict]:
    """Chat messages for one benchmark item: system text, user text, then the
    labeled reference image followed by the edited view (always that order)."""
    letters = valid_letters(item.num_labels)
    user_text = USER_TEMPLATE.format(letters=", ".join(letters))
    return [
        {"role": "system", "content": SYSTEM_TEXT},
        {
            "role": "user",
            "content": [
                {"type": "text", "text": user_text},
                _image_part(item.image_labeled),
                _image_part(item.image_edited),
            ],
        },
    ]
