class OracleFailure(Exception):
    pass

class UsageError(Exception):
    pass
