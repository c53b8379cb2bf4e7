"""Input checks shared by the estimator layer."""

from __future__ import annotations

from typing import Any, Iterable, Sequence

from .grounding import Claim
from .pipelines import normalize_label


def check_claims(X: Any) -> list[Claim]:
    """Coerce ``X`` to a list of Claim.

    Accepts Claim objects, plain strings, mappings with a ``claim`` (or
    ``text``) key, and sequences of ``(text, company)`` pairs.
    """
    if isinstance(X, (str, bytes)):
        raise TypeError("expected a sequence of claims, got a single string")
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of claims, got {type(X).__name__}") from None
    if not items:
        raise ValueError("no claims given")
    out = []
    for i, item in enumerate(items):
        if isinstance(item, Claim):
            out.append(item)
        elif isinstance(item, str):
            out.append(Claim(item, id=str(i)))
        elif isinstance(item, dict):
            text = item.get("claim", item.get("text"))
            if not isinstance(text, str):
                raise ValueError(f"claim {i} has no text")
            out.append(Claim(text, id=str(item.get("id", i)), company=item.get("company") or None,
                             label=normalize_label(item.get("label"))))
        elif isinstance(item, (tuple, list)) and len(item) == 2 and all(isinstance(v, str) for v in item):
            out.append(Claim(item[0], id=str(i), company=item[1] or None))
        else:
            raise TypeError(f"cannot interpret claim {i}: {item!r}")
    return out


def check_labels(y: Iterable[Any], n: int | None = None) -> list[str]:
    labels = [normalize_label(v) for v in y]
    if any(v is None for v in labels):
        raise ValueError("labels must not be missing")
    if n is not None and len(labels) != n:
        raise ValueError(f"got {len(labels)} labels for {n} claims")
    return labels


def check_in(name: str, value: Any, allowed: Sequence[Any]) -> None:
    if value not in allowed:
        raise ValueError(f"{name} must be one of {list(allowed)}, got {value!r}")
