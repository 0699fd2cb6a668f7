# kvtier: two-tier KV-cache placement simulator
__version__ = "1.0.0"
