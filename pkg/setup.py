from setuptools import setup, find_packages

setup(
    name="vortexshaper",
    version="1.0.0",
    description="Cold-atom cloud shaping with vortex and burger beams",
    packages=find_packages(exclude=['tests']),
    package_data={'vortexshaper.presets': ['*.json']},
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.26.0",
        "scipy>=1.11.0",
        "sympy>=1.12",
        "pandas>=2.1.0",
        "plotly>=5.18.0",
        "psutil>=5.9.0",
    ],
    entry_points={
        'console_scripts': [
            'vortexshaper=vortexshaper.main:main',
        ],
    },
)
