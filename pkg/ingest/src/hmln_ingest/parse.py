"""Rule-based extraction of (subject, relation, object) triplets from captions.

A full statistical scene-graph parser is deliberately out of scope; the
rules below cover the caption register (short declarative noun phrases)
with a closed set of prepositions and attribute adjectives. The parser is
versioned (``PARSER_VERSION``) because golden files downstream freeze its
output.
"""

import re

PARSER_VERSION = "rules/v1"

_ARTICLES = {"a", "an", "the", "some", "its", "his", "her", "their"}

_PREPOSITIONS = {
    "on", "in", "at", "with", "under", "over", "near", "by",
    "beside", "behind", "above", "below", "inside", "across",
}

# attribute adjectives rendered as unary "is" predicates
_ADJECTIVES = {
    "red", "green", "blue", "yellow", "orange", "purple", "pink",
    "brown", "black", "white", "gray", "grey",
    "small", "large", "big", "little", "tall", "short",
    "young", "old", "wooden", "sandy", "snowy", "wet", "dry",
}

# a few -ing words that are not actions in this register
_ING_NOUNS = {"building", "ceiling", "clothing", "painting", "railing"}

_TOKEN_RE = re.compile(r"[a-z]+")


class ParseError(ValueError):
    pass


def _is_action(token):
    return token.endswith("ing") and len(token) > 4 and token not in _ING_NOUNS


def _is_noun(token):
    return (
        token not in _ARTICLES
        and token not in _PREPOSITIONS
        and token not in _ADJECTIVES
        and not _is_action(token)
    )


def extract_predicates(caption):
    """Return deduplicated (subject, relation, object) triplets.

    Three patterns are recognized, scanning left to right:

    * adjective + noun        -> (noun, "is", adjective)
    * noun  -ing  [prep] noun -> (noun, "-ing [prep]", noun)
    * noun  prep  noun        -> (noun, prep, noun)

    After a relation fires, its object becomes the new subject, so
    "man riding horse on beach" chains into two triplets the way the
    figures in captioning work usually draw them.
    """
    if not isinstance(caption, str):
        raise ParseError(f"caption must be a string, got {type(caption).__name__}")
    if not caption.strip():
        raise ParseError("caption is empty")
    tokens = [t for t in _TOKEN_RE.findall(caption.lower()) if t not in _ARTICLES]

    triplets = []

    def emit(subject, relation, obj):
        t = (subject, relation, obj)
        if t not in triplets:
            triplets.append(t)

    # unary attributes first: adjective immediately before its noun
    for prev, cur in zip(tokens, tokens[1:]):
        if prev in _ADJECTIVES and _is_noun(cur):
            emit(cur, "is", prev)

    def next_noun(start):
        for j in range(start, len(tokens)):
            if _is_noun(tokens[j]):
                return j
        return None

    subject = None
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if _is_noun(tok):
            subject = tok
            i += 1
            continue
        if _is_action(tok) and subject is not None:
            relation = tok
            j = i + 1
            if j < len(tokens) and tokens[j] in _PREPOSITIONS:
                relation = f"{tok} {tokens[j]}"
                j += 1
            k = next_noun(j)
            if k is not None:
                emit(subject, relation, tokens[k])
                subject = tokens[k]
                i = k + 1
                continue
        elif tok in _PREPOSITIONS and subject is not None:
            k = next_noun(i + 1)
            if k is not None:
                emit(subject, tok, tokens[k])
                subject = tokens[k]
                i = k + 1
                continue
        i += 1

    return triplets
