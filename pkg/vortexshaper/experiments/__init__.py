# Experiment sequences and presets
