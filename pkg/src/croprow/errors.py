"""Exception hierarchy shared by every pipeline stage."""


class CroprowError(Exception):
    """Base class for recoverable pipeline failures."""


# point-cloud core
class EmptyForeground(CroprowError):
    pass


class DegenerateMask(CroprowError):
    pass


class NoSharedPixels(CroprowError):
    pass


class EmptyCloud(CroprowError):
    pass


class NoCorrespondences(CroprowError):
    pass


# reconstruction
class PairFailure(CroprowError):
    """A frame pair could not be registered. ``cause`` holds the underlying error."""

    def __init__(self, cause):
        self.cause = cause
        super().__init__(f"pair registration failed: {type(cause).__name__}: {cause}")


class SequenceFailure(CroprowError):
    pass


class DegenerateSamples(CroprowError):
    pass


class NoModel(CroprowError):
    pass


class EmptyScene(CroprowError):
    pass


# kinematics / planning
class DimensionMismatch(CroprowError):
    pass


class NotConverged(CroprowError):
    def __init__(self, best_error, best_q=None):
        self.best_error = float(best_error)
        self.best_q = best_q
        super().__init__(f"IK did not converge, best error {self.best_error:.6g} m")


class NoGoalsFound(CroprowError):
    def __init__(self, rejections):
        self.rejections = dict(rejections)
        super().__init__(f"no goal configuration accepted; rejections {self.rejections}")


class StartInCollision(CroprowError):
    pass


class PlanningTimeout(CroprowError):
    def __init__(self, iterations, tree_sizes):
        self.iterations = iterations
        self.tree_sizes = tuple(tree_sizes)
        super().__init__(
            f"no path after {iterations} iterations (tree sizes {self.tree_sizes})"
        )


# data ingestion
class InvalidSpec(CroprowError):
    pass


class IngestionError(CroprowError):
    pass
