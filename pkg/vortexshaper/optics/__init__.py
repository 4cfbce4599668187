# Beam optics
