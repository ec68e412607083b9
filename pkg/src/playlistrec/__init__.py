"""Hybrid playlist-continuation recommender."""
