"""
Dynamics Expression DSL
Tokenizer, Pratt parser, canonical printer and numpy evaluator for right-hand
sides written as plain arithmetic over t, x1..xn and u1..um
"""

import logging
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from app.core.errors import ExpressionSyntaxError, InputValidationError

logger = logging.getLogger(__name__)

# Functions available to expressions, all unary
FUNCTIONS: Dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
}

# Binding powers (higher binds tighter)
ADDITIVE = 10
MULTIPLICATIVE = 20
PREFIX = 25
POWER = 30
ATOM = 40

BINARY_POWERS = {"+": ADDITIVE, "-": ADDITIVE, "*": MULTIPLICATIVE, "/": MULTIPLICATIVE, "^": POWER}

TOKEN_PATTERN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)

VARIABLE_PATTERN = re.compile(r"^([xu])(\d+)$")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str   # 't', 'x' or 'u'
    index: int  # 1-based for x and u, 0 for t


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    position: int


def tokenize(source: str) -> List[Token]:
    """Split source into tokens, always terminated by an `end` token"""
    tokens: List[Token] = []
    position = 0
    while position < len(source):
        match = TOKEN_PATTERN.match(source, position)
        if match is None:
            raise ExpressionSyntaxError(f"Unexpected character {source[position]!r}", position)
        if match.lastgroup != "ws":
            tokens.append(Token(match.lastgroup, match.group(), position))
        position = match.end()
    tokens.append(Token("end", "", len(source)))
    return tokens


class _PrattParser:
    """Top-down operator precedence parser over one component expression"""

    def __init__(self, source: str, n: int, m: int):
        self.source = source
        self.n = n
        self.m = m
        self.tokens = tokenize(source)
        self.index = 0

    @property
    def token(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, text: str) -> Token:
        if self.token.text != text:
            found = self.token.text or "end of input"
            raise ExpressionSyntaxError(f"Expected {text!r}, found {found!r}", self.token.position)
        return self.advance()

    def parse(self) -> Node:
        if self.token.kind == "end":
            raise ExpressionSyntaxError("Empty expression", 0)
        node = self.expression(0)
        if self.token.kind != "end":
            raise ExpressionSyntaxError(f"Unexpected token {self.token.text!r}", self.token.position)
        return node

    def expression(self, rbp: int) -> Node:
        left = self.nud(self.advance())
        while rbp < self.left_power(self.token):
            left = self.led(self.advance(), left)
        return left

    @staticmethod
    def left_power(token: Token) -> int:
        if token.kind == "op":
            return BINARY_POWERS.get(token.text, 0)
        return 0

    def nud(self, token: Token) -> Node:
        if token.kind == "number":
            value = float(token.text)
            if not np.isfinite(value):
                raise ExpressionSyntaxError(f"Literal {token.text!r} overflows", token.position)
            return Num(value)
        if token.kind == "name":
            return self.name(token)
        if token.text == "-":
            return Neg(self.expression(PREFIX))
        if token.text == "+":
            return self.expression(PREFIX)
        if token.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        found = token.text or "end of input"
        raise ExpressionSyntaxError(f"Unexpected token {found!r}", token.position)

    def led(self, token: Token, left: Node) -> Node:
        if token.text == "^":
            # right associative
            return BinOp("^", left, self.expression(POWER - 1))
        return BinOp(token.text, left, self.expression(BINARY_POWERS[token.text]))

    def name(self, token: Token) -> Node:
        if self.token.text == "(":
            if token.text not in FUNCTIONS:
                raise ExpressionSyntaxError(f"Unknown function {token.text!r}", token.position)
            self.advance()
            args: List[Node] = []
            if self.token.text != ")":
                args.append(self.expression(0))
                while self.token.text == ",":
                    self.advance()
                    args.append(self.expression(0))
            self.expect(")")
            if len(args) != 1:
                raise ExpressionSyntaxError(
                    f"{token.text} expects 1 argument, got {len(args)}", token.position
                )
            return Call(token.text, args[0])

        if token.text in FUNCTIONS:
            raise ExpressionSyntaxError(f"Function {token.text!r} used without arguments", token.position)
        if token.text == "t":
            return Var("t", 0)

        match = VARIABLE_PATTERN.match(token.text)
        if match is None:
            raise ExpressionSyntaxError(f"Unknown identifier {token.text!r}", token.position)
        kind, index = match.group(1), int(match.group(2))
        limit = self.n if kind == "x" else self.m
        if not 1 <= index <= limit:
            raise ExpressionSyntaxError(
                f"Unknown identifier {token.text!r}: {kind} has dimension {limit}", token.position
            )
        return Var(kind, index)


def parse_expression(text: str, n: int, m: int) -> Node:
    """Parse a single component expression"""
    return _PrattParser(text, n, m).parse()


def _precedence(node: Node) -> int:
    if isinstance(node, BinOp):
        return BINARY_POWERS[node.op]
    if isinstance(node, Neg):
        return PREFIX
    return ATOM


def _format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(float(value))


def to_source(node: Node) -> str:
    """Canonical text for a node; parsing the result gives back the same tree"""
    if isinstance(node, Num):
        return _format_number(node.value)
    if isinstance(node, Var):
        return "t" if node.kind == "t" else f"{node.kind}{node.index}"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, Neg):
        inner = to_source(node.operand)
        if _precedence(node.operand) < PREFIX:
            inner = f"({inner})"
        return f"-{inner}"

    power = BINARY_POWERS[node.op]
    left = to_source(node.left)
    right = to_source(node.right)
    if node.op == "^":
        if _precedence(node.left) <= power:
            left = f"({left})"
        if _precedence(node.right) < power:
            right = f"({right})"
    else:
        if _precedence(node.left) < power:
            left = f"({left})"
        if _precedence(node.right) <= power:
            right = f"({right})"
    if node.op in "+-":
        return f"{left} {node.op} {right}"
    return f"{left}{node.op}{right}"


def _evaluate(node: Node, t, x, u):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.kind == "t":
            return t
        return (x if node.kind == "x" else u)[node.index - 1]
    if isinstance(node, Neg):
        return np.negative(_evaluate(node.operand, t, x, u))
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_evaluate(node.arg, t, x, u))

    left = _evaluate(node.left, t, x, u)
    right = _evaluate(node.right, t, x, u)
    if node.op == "+":
        return np.add(left, right)
    if node.op == "-":
        return np.subtract(left, right)
    if node.op == "*":
        return np.multiply(left, right)
    if node.op == "/":
        return np.true_divide(left, right)
    return np.power(left, right)


def evaluate(node: Node, t, x, u):
    """
    Evaluate a node; x has shape (n,) or (n, W) and u has shape (m,) or (m, W)
    so a batch of W points is evaluated column-wise in one call.
    Non-finite results come back as inf/nan, never as exceptions.
    """
    with np.errstate(all="ignore"):
        return _evaluate(node, t, x, u)


@dataclass(frozen=True)
class DynamicsExpr:
    """Per-component expression trees of a right-hand side"""

    components: Tuple[Node, ...]
    n: int
    m: int

    def to_source(self) -> List[str]:
        return [to_source(component) for component in self.components]

    def evaluate(self, t, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        batch_shape = np.broadcast_shapes(np.shape(x)[1:], np.shape(u)[1:], np.shape(t))
        out = np.empty((len(self.components),) + batch_shape)
        for i, component in enumerate(self.components):
            out[i] = evaluate(component, t, x, u)
        return out


def parse_dynamics(source: Union[str, Sequence[str]], n: int, m: int) -> DynamicsExpr:
    """
    Parse a right-hand side given either as one string with components
    separated by ';' or as a sequence of component strings
    """
    if n < 1 or m < 1:
        raise InputValidationError("Dimensions must be positive", n=n, m=m)

    if isinstance(source, str):
        pieces: List[Tuple[str, int]] = []
        start = 0
        for chunk in source.split(";"):
            pieces.append((chunk, start))
            start += len(chunk) + 1
    else:
        pieces = [(str(chunk), 0) for chunk in source]

    if not pieces or all(not chunk.strip() for chunk, _ in pieces):
        raise InputValidationError("Dynamics source must be nonempty")

    components: List[Node] = []
    for index, (chunk, offset) in enumerate(pieces):
        try:
            components.append(parse_expression(chunk, n, m))
        except ExpressionSyntaxError as e:
            raise ExpressionSyntaxError(
                e.message.rsplit(" at position", 1)[0], e.position + offset, component=index + 1
            ) from e

    logger.debug(f"Parsed {len(components)} component(s) with n={n}, m={m}")
    return DynamicsExpr(tuple(components), n, m)
