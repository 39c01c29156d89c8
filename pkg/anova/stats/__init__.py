# Numerical library: GLM factorization, imputation, transforms, inference, outlier screen, simulations
