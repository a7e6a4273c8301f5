class InvalidSpec(Exception):
    pass

class InvalidLevel(InvalidSpec):
    pass

class NonpositiveNumeraire(Exception):
    pass

class EmptySet(Exception):
    pass

class InfeasibleBand(Exception):
    pass

class EmptyFamily(Exception):
    pass

class ConstructionFailed(Exception):
    pass

class PreconditionViolated(Exception):
    pass

class BandClampWarning(UserWarning):
    pass
