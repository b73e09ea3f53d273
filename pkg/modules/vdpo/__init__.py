# pnpdm/modules/vdpo/__init__.py
"""
Coupled van der Pol oscillator ring scenario
"""
