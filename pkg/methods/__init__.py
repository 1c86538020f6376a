"""Mixture models fitted on moderated t-statistics."""
