"""
Prompt Loading Utilities
========================

Functions for loading the judge rubric and rated exemplars from the
prompts directory, and for rendering rating cases as judge-readable text.
"""

import json
from pathlib import Path
from typing import Optional

from errors import InvalidInputError


PROMPTS_DIR = Path(__file__).parent / "prompts"


def load_prompt(name: str) -> str:
    """Load a prompt template from the prompts directory."""
    prompt_path = PROMPTS_DIR / f"{name}.md"
    return prompt_path.read_text(encoding="utf-8")


def get_judge_rubric() -> str:
    """Load the rating rubric sent to the judge as system text."""
    return load_prompt("judge_rubric")


def load_exemplars(path: Optional[Path] = None) -> list[dict]:
    """
    Load rated in-context examples for the judge.

    Each exemplar is {"tier": "Good" | "Average" | "Bad", "case": text}.

    Args:
        path: Exemplar JSON file (default: prompts/judge_exemplars.json)

    Returns:
        List of exemplar dicts in file order
    """
    path = path or PROMPTS_DIR / "judge_exemplars.json"
    with open(path, encoding="utf-8") as f:
        exemplars = json.load(f)

    for i, exemplar in enumerate(exemplars):
        if set(exemplar) != {"tier", "case"}:
            raise InvalidInputError(f"{path}: exemplar {i} must have exactly 'tier' and 'case'")
        if exemplar["tier"] not in ("Good", "Average", "Bad"):
            raise InvalidInputError(f"{path}: exemplar {i} has unknown tier {exemplar['tier']!r}")
    return exemplars


def render_tokens(tokens, terminator: Optional[int] = None) -> str:
    """Token ids as space-separated text; the terminator shows as <end>."""
    return " ".join("<end>" if t == terminator else str(t) for t in tokens)


def format_case(prompt, response, terminator: Optional[int] = None) -> str:
    """Render one prompt/response pair the way the exemplars are written."""
    return (
        f"Prompt: {render_tokens(prompt, terminator)}\n"
        f"Response: {render_tokens(response, terminator)}"
    )
