"""The 17 PII placeholder categories and their direct/indirect split."""

from __future__ import annotations

# Placeholder name -> human meaning.
CATEGORIES: dict[str, str] = {
    "AFDELING": "Department",
    "APOTHEEK": "Pharmacy",
    "ARTS": "Doctor",
    "EHR": "Electronic Health Record System",
    "FEESTDAG": "Holiday",
    "GEBOORTEDATUM": "Date of Birth",
    "NAAM": "Name",
    "RARE_DISEASE": "Rare Disease",
    "RARE_DISEASE_TREATMENT": "Rare Disease Treatment",
    "REVALIDATIECENTRUM": "Rehabilitation Center",
    "SEIN": "Signal",
    "STAD": "City",
    "TELNR": "Telephone Number",
    "TRIAL-ID": "ID of Clinical Trial",
    "ZIEKENBOEG": "Sickbay",
    "ZIEKENHUIS": "Hospital",
    "ZKH": "Abbreviation for Hospital",
}

# Categories that identify a person on their own; everything else is an
# indirect identifier (quasi-identifier).
DIRECT_CATEGORIES: frozenset[str] = frozenset(
    {"ARTS", "EHR", "GEBOORTEDATUM", "NAAM", "STAD", "TELNR"}
)


def is_known_category(name: str) -> bool:
    return name in CATEGORIES


def is_direct(category: str) -> bool:
    return category in DIRECT_CATEGORIES


def placeholder_text(category: str) -> str:
    """Surface form of a category's mask token, e.g. '<NAAM>'."""
    return f"<{category}>"
