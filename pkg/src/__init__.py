# PCFG expression-probability engine
