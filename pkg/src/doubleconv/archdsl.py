"""Layer-notation parser, shape inference, and parameter accounting.

Grammar (case-insensitive heads, hyphen-separated decimal integers):

    C-<c>-<z>           convolution, c filters of size z x z
    DC-<c>-<z'>-<z>-<s> double convolution, c meta filters
    MC-<c>-<z>-<k>      maxout convolution, channel max with stride k
    P-<s>               spatial max pooling
    GAP                 global average pooling
    SOFTMAX-<n>         linear classifier with n outputs

Config files are line-oriented: one token per line, ``#`` starts a
comment, blank lines are ignored, and an optional leading ``input: c,h,w``
directive sets the input shape. Convolutional layers use same padding so
spatial dimensions are preserved; every C/DC/MC token carries an implicit
batch normalization (2 parameters per output channel of the convolution).
Relative parameter counts compare convolution filter parameters only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .dconv import DoubleConvSpec
from .errors import InvalidSpecError, ParseError, ShapeError


@dataclass(frozen=True)
class ConvToken:
    c: int
    z: int

    def render(self):
        return f"C-{self.c}-{self.z}"


@dataclass(frozen=True)
class DoubleConvToken:
    c: int
    z_meta: int
    z_eff: int
    s: int

    def spec(self) -> DoubleConvSpec:
        return DoubleConvSpec(self.c, self.z_meta, self.z_eff, self.s)

    def render(self):
        return f"DC-{self.c}-{self.z_meta}-{self.z_eff}-{self.s}"


@dataclass(frozen=True)
class MaxoutConvToken:
    c: int
    z: int
    k: int

    def render(self):
        return f"MC-{self.c}-{self.z}-{self.k}"


@dataclass(frozen=True)
class PoolToken:
    s: int

    def render(self):
        return f"P-{self.s}"


@dataclass(frozen=True)
class GapToken:
    def render(self):
        return "GAP"


@dataclass(frozen=True)
class SoftmaxToken:
    classes: int

    def render(self):
        return f"SOFTMAX-{self.classes}"


LayerToken = Union[
    ConvToken, DoubleConvToken, MaxoutConvToken, PoolToken, GapToken, SoftmaxToken
]

_ARITIES = {"C": 2, "DC": 4, "MC": 3, "P": 1, "GAP": 0, "SOFTMAX": 1}


def parse_layer_token(text: str, line: int | None = None) -> LayerToken:
    """Parse one token string; raises :class:`ParseError` with positions."""
    stripped = text.strip()
    col0 = len(text) - len(text.lstrip()) + 1
    if not stripped:
        raise ParseError("empty token", line, col0)
    fields = stripped.split("-")
    head = fields[0].upper()
    if head not in _ARITIES:
        raise ParseError(f"unknown layer head {fields[0]!r}", line, col0)
    arity = _ARITIES[head]
    if len(fields) - 1 != arity:
        raise ParseError(
            f"{head} takes {arity} integer field(s), got {len(fields) - 1}", line, col0
        )
    values = []
    col = col0 + len(fields[0]) + 1
    for raw in fields[1:]:
        if not raw.isdigit():
            raise ParseError(f"non-integer field {raw!r}", line, col)
        v = int(raw)
        if v < 1:
            raise ParseError(f"field must be >= 1, got {v}", line, col)
        values.append(v)
        col += len(raw) + 1
    try:
        if head == "C":
            return ConvToken(*values)
        if head == "DC":
            tok = DoubleConvToken(*values)
            tok.spec()  # surfaces z' < z and divisibility violations
            return tok
        if head == "MC":
            tok = MaxoutConvToken(*values)
            if tok.c % tok.k:
                raise InvalidSpecError(
                    f"filter count {tok.c} not divisible by pooling stride {tok.k}"
                )
            return tok
        if head == "P":
            return PoolToken(values[0])
        if head == "SOFTMAX":
            return SoftmaxToken(values[0])
        return GapToken()
    except InvalidSpecError as exc:
        raise ParseError(str(exc), line, col0) from exc


@dataclass
class ArchSpec:
    """A parsed network: tokens, input shape, inferred shapes, parameter counts."""

    tokens: list
    input_shape: tuple
    token_lines: list | None = None  # source line per token, when file-derived
    layer_shapes: list = field(default_factory=list)  # output shape per token
    conv_params: list = field(default_factory=list)  # filter params per token
    aux_params: list = field(default_factory=list)  # batch-norm / classifier params

    def __post_init__(self):
        if not self.tokens:
            raise ParseError("architecture has no layers")
        if len(self.input_shape) != 3:
            raise ShapeError(f"input shape must be [c, h, w], got {self.input_shape}")
        self._infer()

    def _infer(self):
        softmax_seen = False
        c, h, w = self.input_shape
        shape: tuple = (c, h, w)
        self.layer_shapes, self.conv_params, self.aux_params = [], [], []
        for pos, tok in enumerate(self.tokens):
            where = f"layer {pos + 1} ({tok.render()})"
            if self.token_lines is not None:
                where = f"line {self.token_lines[pos]}, {where}"
            if softmax_seen:
                raise ParseError(f"{where}: no layers allowed after SOFTMAX")
            conv_p = aux_p = 0
            if isinstance(tok, (ConvToken, MaxoutConvToken)):
                if len(shape) != 3:
                    raise ParseError(f"{where}: convolution after GAP")
                if tok.z % 2 == 0:
                    raise ParseError(f"{where}: same padding needs odd filter size")
                c_in = shape[0]
                conv_p = c_in * tok.c * tok.z * tok.z
                aux_p = 2 * tok.c  # batch norm acts on the conv output
                out_c = tok.c if isinstance(tok, ConvToken) else tok.c // tok.k
                shape = (out_c, shape[1], shape[2])
            elif isinstance(tok, DoubleConvToken):
                if len(shape) != 3:
                    raise ParseError(f"{where}: convolution after GAP")
                if tok.z_eff % 2 == 0:
                    raise ParseError(f"{where}: same padding needs odd effective size")
                spec = tok.spec()
                c_in = shape[0]
                conv_p = c_in * tok.c * tok.z_meta * tok.z_meta
                out_c = tok.c * spec.channel_multiplier
                aux_p = 2 * out_c
                shape = (out_c, shape[1], shape[2])
            elif isinstance(tok, PoolToken):
                if len(shape) != 3:
                    raise ParseError(f"{where}: pooling after GAP")
                if shape[1] % tok.s or shape[2] % tok.s:
                    raise ParseError(
                        f"{where}: spatial dims {shape[1]}x{shape[2]} not divisible by {tok.s}"
                    )
                shape = (shape[0], shape[1] // tok.s, shape[2] // tok.s)
            elif isinstance(tok, GapToken):
                if len(shape) != 3:
                    raise ParseError(f"{where}: GAP needs spatial input")
                shape = (shape[0],)
            elif isinstance(tok, SoftmaxToken):
                if len(shape) != 1:
                    raise ParseError(f"{where}: SOFTMAX must follow GAP")
                aux_p = shape[0] * tok.classes
                shape = (tok.classes,)
                softmax_seen = True
            self.layer_shapes.append(shape)
            self.conv_params.append(conv_p)
            self.aux_params.append(aux_p)
        if not softmax_seen:
            raise ParseError("architecture must end with a SOFTMAX token")

    @property
    def classes(self) -> int:
        return self.tokens[-1].classes

    @property
    def total_conv_params(self) -> int:
        return sum(self.conv_params)

    @property
    def total_params(self) -> int:
        return sum(self.conv_params) + sum(self.aux_params)

    def __eq__(self, other):
        if not isinstance(other, ArchSpec):
            return NotImplemented
        return self.tokens == other.tokens and self.input_shape == other.input_shape


def parse_network(lines, input_shape=None) -> ArchSpec:
    """Parse config lines (token per line, comments, optional input directive)."""
    tokens = []
    token_lines = []
    directive_shape = None
    for no, raw in enumerate(lines, start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        low = body.lower()
        if low.startswith("input:"):
            if tokens:
                raise ParseError("input directive must precede all tokens", no)
            parts = [p.strip() for p in body[len("input:") :].split(",")]
            if len(parts) != 3 or not all(p.isdigit() for p in parts):
                raise ParseError("input directive must be 'input: c,h,w'", no)
            directive_shape = tuple(int(p) for p in parts)
            continue
        tokens.append(parse_layer_token(raw.split("#", 1)[0], line=no))
        token_lines.append(no)
    shape = tuple(input_shape) if input_shape is not None else directive_shape
    if shape is None:
        raise ParseError("no input shape: pass one or add an 'input: c,h,w' directive")
    if not tokens:
        raise ParseError("architecture has no layers")
    return ArchSpec(tokens, shape, token_lines)


def render(spec: ArchSpec) -> list[str]:
    """Canonical config lines; ``parse_network(render(x))`` equals ``x``."""
    lines = ["input: {},{},{}".format(*spec.input_shape)]
    lines.extend(tok.render() for tok in spec.tokens)
    return lines


def relative_params(a: ArchSpec, reference: ArchSpec) -> float:
    """Ratio of convolution filter parameters (batch norm and classifier excluded)."""
    ref = reference.total_conv_params
    if ref == 0:
        raise InvalidSpecError("reference architecture has no convolution parameters")
    return float(Fraction(a.total_conv_params, ref))


def inspect_table(spec: ArchSpec, reference: ArchSpec | None = None) -> str:
    """Human-readable per-layer table with shapes and parameter counts."""
    rows = [("layer", "output shape", "filter params", "other params")]
    for tok, shape, cp, ap in zip(
        spec.tokens, spec.layer_shapes, spec.conv_params, spec.aux_params
    ):
        rows.append((tok.render(), "x".join(map(str, shape)), str(cp), str(ap)))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    out = []
    for r in rows:
        out.append("  ".join(f"{r[i]:<{widths[i]}}" for i in range(4)).rstrip())
    out.append(
        f"total: {spec.total_conv_params} filter params, "
        f"{spec.total_params} including batch norm and classifier"
    )
    if reference is not None:
        ratio = relative_params(spec, reference)
        out.append(f"relative filter params vs reference: {ratio:.4g}")
    return "\n".join(out)
