"""Exception hierarchy shared across the package."""


class MFMapError(Exception):
    """Base class for all package errors."""


class DataValidationError(MFMapError, ValueError):
    """Malformed or inconsistent input data (locations, ensembles, configs)."""


class NumericalError(MFMapError, ArithmeticError):
    """A numerical routine failed (factorization, divergence, non-finite values)."""


class DegenerateKernelError(NumericalError):
    def __init__(self, fidelity: int, index: int, detail: str = ""):
        self.fidelity = fidelity
        self.index = index
        msg = f"Gram matrix not positive definite at fidelity {fidelity}, location rank {index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class TrainingDivergedError(NumericalError):
    """Objective became non-finite; ``theta`` holds the last finite iterate."""

    def __init__(self, fidelity: int, epoch: int, theta):
        self.fidelity = fidelity
        self.epoch = epoch
        self.theta = theta
        super().__init__(
            f"objective for fidelity {fidelity} became non-finite in epoch {epoch}"
        )
