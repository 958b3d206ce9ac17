# Rechenkern: Algebra, Modell, Spektren, Statistik, Ensembles.

PIPELINE_VERSION = "1.0.0"
