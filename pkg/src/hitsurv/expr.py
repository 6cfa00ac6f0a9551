"""Closed-form expressions in the covariate.

Rate and transition entries of a model are written as small arithmetic
expressions such as ``"(0.4 + z) / (1.1 + z + z**2)"``.  Only numeric
literals, the covariate names, ``+ - * / **`` and ``sqrt`` are accepted;
everything else is rejected at parse time.
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np


class ExpressionError(ValueError):
    """Raised when an expression is malformed or uses a forbidden construct."""


_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARYOPS = (ast.UAdd, ast.USub)
_FUNCS = {"sqrt": np.sqrt}


def covariate_names(dim: int) -> tuple[str, ...]:
    names = tuple(f"z{i + 1}" for i in range(dim))
    return ("z",) + names


def _check(node: ast.AST, allowed: set[str], source: str) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, allowed, source)
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _BINOPS):
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {source!r}")
        _check(node.left, allowed, source)
        _check(node.right, allowed, source)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _UNARYOPS):
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {source!r}")
        _check(node.operand, allowed, source)
    elif isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"non-numeric literal {node.value!r} in {source!r}")
    elif isinstance(node, ast.Name):
        if node.id not in allowed:
            raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError(f"only sqrt(...) calls are allowed in {source!r}")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"sqrt takes exactly one argument in {source!r}")
        _check(node.args[0], allowed, source)
    else:
        raise ExpressionError(f"construct {type(node).__name__} not allowed in {source!r}")


class Expression:
    """A parsed expression, callable on a covariate vector or a batch of them.

    ``expr(z)`` with ``z`` of shape ``(p,)`` returns a float; with shape
    ``(m, p)`` it returns an array of length ``m``.
    """

    def __init__(self, source: str | float | int, dim: int = 1):
        self.source = str(source).strip()
        self.dim = dim
        if not self.source:
            raise ExpressionError("empty expression")
        try:
            tree = ast.parse(self.source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.source!r}: {exc.msg}") from None
        _check(tree, set(covariate_names(dim)), self.source)
        self._code = compile(tree, "<expr>", "eval")
        self._is_constant = not any(isinstance(n, ast.Name) for n in ast.walk(tree))

    def __call__(self, z) -> float | np.ndarray:
        z = np.asarray(z, dtype=float)
        batched = z.ndim == 2
        cols = np.atleast_2d(z).reshape(-1, self.dim)
        env: dict[str, object] = {"sqrt": np.sqrt, "__builtins__": {}}
        env["z"] = cols[:, 0]
        for i in range(self.dim):
            env[f"z{i + 1}"] = cols[:, i]
        with np.errstate(all="ignore"):
            out = eval(self._code, env)  # noqa: S307 - tree is whitelisted above
        out = np.broadcast_to(np.asarray(out, dtype=float), (cols.shape[0],))
        return out.copy() if batched else float(out[0])

    @property
    def is_constant(self) -> bool:
        return self._is_constant

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"


def compile_matrix(rows, dim: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    """Compile a square table of expression strings into ``z -> P(z)``."""
    parsed = [[Expression(cell, dim) for cell in row] for row in rows]
    n = len(parsed)
    if any(len(row) != n for row in parsed):
        raise ExpressionError("transition matrix must be square")

    def evaluate(z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.ndim == 2:
            out = np.empty((z.shape[0], n, n))
            for i, row in enumerate(parsed):
                for j, cell in enumerate(row):
                    out[:, i, j] = cell(z)
            return out
        out = np.empty((n, n))
        for i, row in enumerate(parsed):
            for j, cell in enumerate(row):
                out[i, j] = cell(z)
        return out

    return evaluate
