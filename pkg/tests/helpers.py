"""Shared test oracles, deliberately independent of the package internals."""

from __future__ import annotations

import hashlib
import hmac
import random
from itertools import combinations

import sympy

from cake.policy import (
    AccessTree,
    And,
    Leaf,
    Or,
    PolicyAst,
    TreeGate,
    TreeLeaf,
    and_of,
    or_of,
)

ATTRIBUTE_POOL = ["a1", "b2", "c3", "d4", "e5", "f6"]


def random_policy(rng: random.Random, attrs: list[str], depth: int = 4,
                  max_fanout: int = 3) -> PolicyAst:
    """Random AST over the given attribute names, depth-bounded."""
    if depth == 0 or rng.random() < 0.3:
        return Leaf(rng.choice(attrs))
    children = [random_policy(rng, attrs, depth - 1, max_fanout)
                for _ in range(rng.randint(2, max_fanout))]
    return and_of(children) if rng.random() < 0.5 else or_of(children)


def sympy_eval(ast: PolicyAst, attrs: frozenset[str] | set[str]) -> bool:
    """Truth-table oracle: evaluate via sympy's logic engine."""
    def to_expr(node: PolicyAst):
        if isinstance(node, Leaf):
            return sympy.Symbol(node.name)
        op = sympy.And if isinstance(node, And) else sympy.Or
        return op(*(to_expr(c) for c in node.children))

    expr = to_expr(ast)
    assignment = {sym: sym.name in attrs for sym in expr.free_symbols}
    return bool(expr.subs(assignment))


def tree_satisfied(tree: AccessTree, leaf_indices: set[int]) -> bool:
    """Recursive threshold check, the dual of share reconstruction."""
    if isinstance(tree, TreeLeaf):
        return tree.leaf_index in leaf_indices
    hits = sum(tree_satisfied(c, leaf_indices) for c in tree.children)
    return hits >= tree.threshold


def attribute_subsets(attrs: frozenset[str]):
    """All subsets of an attribute set, smallest first."""
    ordered = sorted(attrs)
    for size in range(len(ordered) + 1):
        for combo in combinations(ordered, size):
            yield frozenset(combo)


def hkdf_sha256(ikm: bytes, info: bytes, length: int = 32) -> bytes:
    """RFC 5869 HKDF-SHA256 with an unset (zero) salt, written from scratch."""
    prk = hmac.new(b"\x00" * 32, ikm, hashlib.sha256).digest()
    okm = b""
    block = b""
    counter = 1
    while len(okm) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        okm += block
        counter += 1
    return okm[:length]


_B58 = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"


def alt_base58_encode(data: bytes) -> str:
    """Byte-by-byte long-division base58, no big integers."""
    digits = [0]
    for byte in data:
        carry = byte
        for i in range(len(digits)):
            carry += digits[i] << 8
            digits[i] = carry % 58
            carry //= 58
        while carry:
            digits.append(carry % 58)
            carry //= 58
    while len(digits) > 1 and digits[-1] == 0:
        digits.pop()
    pad = 0
    for byte in data:
        if byte:
            break
        pad += 1
    body = "" if digits == [0] else "".join(_B58[d] for d in reversed(digits))
    return _B58[0] * pad + body
