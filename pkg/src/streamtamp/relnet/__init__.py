"""Learned relevance model: problem graphs, the network, labels, training and checkpoints."""
