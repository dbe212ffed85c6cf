"""Global Information Network: an add-only hypergraph tuple store over a Kademlia DHT."""

__version__ = "1.0.0"
