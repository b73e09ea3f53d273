# pnpdm/modules/pns/__init__.py
"""
5-area power network scenario (load frequency control)
"""
