"""Exception hierarchy shared by all opflearn modules.

Every exception carries a short machine-readable ``category`` that the CLI
prints on failure.
"""


class OpfLearnError(Exception):
    category = "runtime"


# netio
class CaseFormatError(OpfLearnError):
    category = "case-format"


class MissingBlock(CaseFormatError):
    category = "missing-block"


class MalformedRow(CaseFormatError):
    category = "malformed-row"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NoSlackBus(OpfLearnError):
    category = "no-slack-bus"


class InvalidModel(OpfLearnError):
    category = "invalid-model"


# powerflow / nlp
class NoConvergence(OpfLearnError):
    category = "no-convergence"


class NumericalFailure(OpfLearnError):
    category = "numerical-failure"


# relax
class RelaxInfeasible(OpfLearnError):
    category = "relax-infeasible"

    def __init__(self, message, projection=None):
        super().__init__(message)
        self.projection = projection


class Unbounded(OpfLearnError):
    category = "unbounded"


# polytope
class EmptyPolytope(OpfLearnError):
    category = "empty-polytope"


class StuckSampler(OpfLearnError):
    category = "stuck-sampler"


# pipeline
class AttemptBudgetExhausted(OpfLearnError):
    category = "attempt-budget-exhausted"

    def __init__(self, message, dataset=None, stats=None):
        super().__init__(message)
        self.dataset = dataset
        self.stats = stats


# dataset / mlbench
class SchemaMismatch(OpfLearnError):
    category = "schema-mismatch"


class DegenerateData(OpfLearnError):
    category = "degenerate-data"


class FingerprintMismatch(OpfLearnError):
    category = "fingerprint-mismatch"
