"""Head detection: Haar cascade, raw-pixel kernel classifier and window scanning."""
