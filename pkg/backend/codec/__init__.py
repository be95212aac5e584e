# codec/__init__.py
