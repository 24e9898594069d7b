# Numerical models: bivariate families, marginals, factor structures, quadrature
