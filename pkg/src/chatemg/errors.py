"""Exception hierarchy shared by all chatemg modules."""


class ChatEMGError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(ChatEMGError, ValueError):
    pass


class ContextOverflow(InvalidArgument):
    """Sequence longer than the model context."""


class MalformedRecording(ChatEMGError, ValueError):
    pass


class InsufficientSupport(ChatEMGError, ValueError):
    def __init__(self, intent, message=None):
        self.intent = intent
        super().__init__(message or f"no support segment long enough for intent '{intent}'")


class InvalidCorpus(ChatEMGError, ValueError):
    def __init__(self, intent, message=None):
        self.intent = intent
        super().__init__(message or f"corpus has no data for intent '{intent}'")


class DegenerateTrainingSet(ChatEMGError, ValueError):
    pass


class TrainingDiverged(ChatEMGError, RuntimeError):
    """Raised on a non-finite loss; ``state`` holds the last finite parameters."""

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step


class LeakageError(ChatEMGError, RuntimeError):
    pass


class CheckpointError(ChatEMGError, ValueError):
    pass
