# stn/__init__.py
