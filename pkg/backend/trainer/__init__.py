# trainer/__init__.py
