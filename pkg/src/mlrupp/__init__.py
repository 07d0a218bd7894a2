"""Desk-scale lightweight residual segmentation blocks with exact cost accounting."""
