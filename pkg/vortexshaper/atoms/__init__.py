# Atom cloud models and shaping schemes
