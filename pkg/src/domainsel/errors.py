"""Exception types shared across the package.

ValidationError covers bad user input (files, config, preconditions);
ComputationError covers numerical failures in otherwise valid runs. The
CLI maps them to exit codes 1 and 2 respectively.
"""


class ValidationError(ValueError):
    pass


class ComputationError(RuntimeError):
    pass


class StageError(ComputationError):
    """A pipeline stage failed; carries the stage and artifact for the CLI."""

    def __init__(self, stage: str, artifact: str, message: str):
        super().__init__(f"stage '{stage}', artifact '{artifact}': {message}")
        self.stage = stage
        self.artifact = artifact
