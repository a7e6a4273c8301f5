class InvalidConfig(Exception):
    pass

class UnknownTime(Exception):
    pass

class ZeroBlockMass(Exception):
    pass

class IncompleteMarket(Exception):
    pass

class Arbitrage(Exception):
    pass

class NotMeasurable(Exception):
    pass
