"""Exception hierarchy shared by all compiler stages.

Every user-facing failure derives from CompileError so the CLI and the
service can map it to a diagnostic (`file:line:col: severity: message`)
and exit code 1.  Anything else escaping the pipeline is an internal
invariant failure (exit code 2).
"""


class CompileError(Exception):
    """Base for all diagnosable input errors."""

    severity = "error"

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(message)
        self.message = message
        self.line = line
        self.col = col

    def format(self, filename: str = "<input>") -> str:
        return f"{filename}:{self.line}:{self.col}: {self.severity}: {self.message}"


class SourceSyntaxError(CompileError):
    """Token-level or grammar-level parse failure."""


class UnsupportedConstruct(CompileError):
    """Legal C, but outside the accepted dialect (recursion, while, float...)."""


class RestrictionError(CompileError):
    """Dialect restriction violated (pointer use, non-affine subscript...)."""


class NotConstantBounds(CompileError):
    """Loop bounds/step do not fold to constants where required."""


class ConstantOverflow(CompileError):
    """A folded literal does not fit in 32 bits."""


class NonUniformPattern(CompileError):
    """Loads of one array disagree on loop-index coefficients."""


class LoweringError(CompileError):
    """Compute fragment contains something the dataflow builder rejects."""


class UnstructuredControlFlow(CompileError):
    """Branch shape is not a single-entry single-exit if/else."""


class WidthOverflow(CompileError):
    """Inferred width of a non-feedback node exceeds the 64-bit internal cap."""


class FeedbackTooDeep(CompileError):
    """Feedback cycle cannot close combinationally within one stage."""


class InitFileError(CompileError):
    """Lookup-table initialization file is malformed."""


class ConfigError(CompileError):
    """Generator parameter out of the supported range."""


class LinkError(CompileError):
    """Netlist fragments do not compose (unknown signal, width clash...)."""


class EmitError(CompileError):
    """VHDL emission failed (identifier collision after sanitizing)."""


class VectorShapeError(CompileError):
    """Test vectors do not match the kernel's ports or memory shapes."""


class OracleError(CompileError):
    """Reference interpreter hit undefined behavior (OOB subscript...)."""


class SimTimeout(CompileError):
    """Simulation reached max cycles without `done` asserting."""


class XValue(CompileError):
    """A never-written output memory cell was asserted against."""
