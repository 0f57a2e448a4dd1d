# byzsgd/scripts/__init__.py
