"""Exception hierarchy.

Every error raised by the toolkit carries the name of the module it came
from and a stable machine-readable code, so the CLI can report failures
without string matching.
"""


class GspError(Exception):
    module = "gspnet"
    code = "error"
    numerical = False

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code

    def as_dict(self):
        return {"module": self.module, "code": self.code, "message": str(self)}


class LinalgError(GspError, ValueError):
    module = "linalg"
    code = "invalid_matrix"


class ConvergenceError(LinalgError):
    code = "no_convergence"
    numerical = True

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class GraphError(GspError, ValueError):
    module = "graph"
    code = "invalid_graph"


class SpectralError(GspError, ValueError):
    module = "spectral"
    code = "invalid_spectrum"


class ModelError(GspError, ValueError):
    module = "model"
    code = "invalid_model"


class TrainError(GspError, ValueError):
    module = "train"
    code = "invalid_training"


class DivergenceError(TrainError):
    code = "diverged"
    numerical = True

    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


class PruneError(GspError, ValueError):
    module = "prune"
    code = "invalid_pruning"


class DataError(GspError, ValueError):
    module = "data"
    code = "invalid_data"
