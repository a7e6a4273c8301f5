class InvalidParam(Exception):
    pass

class SingularProjection(Exception):
    pass

class NotPureInsurance(Exception):
    pass
