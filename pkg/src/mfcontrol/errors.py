"""Exception types shared across the package."""


class RolloutDiverged(RuntimeError):
    """A state trajectory produced NaN/Inf during integration."""

    def __init__(self, agent: int, step: int):
        self.agent = agent
        self.step = step
        super().__init__(f"rollout diverged for agent {agent} at step {step}")


class TrainingDiverged(RuntimeError):
    """Feature-network training loss became non-finite."""


class SolverError(RuntimeError):
    """An inner optimization produced a non-finite objective."""


class IncompatibleArtifact(ValueError):
    """A persisted artifact does not match the consuming problem setup."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        msg = f"incompatible artifact: {field} mismatch"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
