"""cosseratflow - Cosserat rod kinematics, dynamics and regularized Stokes flow"""

__version__ = "1.0.0"
__description__ = "Closed-form rod kinematics, semi-analytical rod dynamics and flagellated swimmers in Stokes flow"
