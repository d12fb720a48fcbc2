class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch_index: int, terms: dict):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}: {terms}")
        self.epoch = epoch
        self.batch_index = batch_index
        self.terms = terms
