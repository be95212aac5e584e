# synth/__init__.py
