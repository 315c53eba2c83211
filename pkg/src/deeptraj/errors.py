class DataError(ValueError):
    """Raised for malformed inputs: bad files, mismatched shapes, invalid values."""


class PipelineError(DataError):
    """A data error tagged with the pipeline stage that produced it."""

    def __init__(self, stage, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
