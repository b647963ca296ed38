"""Decentralized dual accelerated methods with lazy, approximate dual gradients."""
