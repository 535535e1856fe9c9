"""Closed category vocabulary shared by the scene generator and the models.

Three whole/part pairs plus two standalone categories. Parts are always
rendered strictly inside their parent, which is what makes a click on, say,
a plate ambiguous between the plate and the vehicle.
"""

CATEGORIES: tuple[str, ...] = (
    "vehicle",
    "plate",
    "animal",
    "head",
    "house",
    "door",
    "ball",
    "tree",
)

#: part category -> whole category
PART_OF: dict[str, str] = {
    "plate": "vehicle",
    "head": "animal",
    "door": "house",
}

WHOLE_TO_PART: dict[str, str] = {v: k for k, v in PART_OF.items()}

STANDALONE: tuple[str, ...] = ("ball", "tree")


def token_id(category: str) -> int:
    return CATEGORIES.index(category)
