"""facetrank: facet-aware reranking of scientific papers.

Scores seed-candidate paper pairs on two independent similarity facets,
background (what problem) and method (how solved), trains one pairwise
cross-encoder per facet, evaluates under graded relevance, and serves
fused rerankings over HTTP.
"""

BACKGROUND = "background"
METHOD = "method"
FACETS = (BACKGROUND, METHOD)

__version__ = "0.1.0"


def validate_facet(facet: str) -> str:
    aliases = {"bg": BACKGROUND, "mt": METHOD, BACKGROUND: BACKGROUND, METHOD: METHOD}
    try:
        return aliases[facet.lower()]
    except KeyError:
        raise ValueError(f"unknown facet {facet!r}, expected one of {FACETS}") from None
