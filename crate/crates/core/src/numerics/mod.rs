//! Kernels, feature maps, quadrature and the regularized kernel quadratic form.

pub mod features;
pub mod kernel;
pub mod quadform;
pub mod quadrature;

pub use features::{polynomial_features, FeatureMap};
pub use kernel::{kernel_eval, kernel_matrix, median_heuristic, KernelSpec, Points, DEFAULT_MAX_PAIRS};
pub use quadform::{critic_term_eigen, regularized_kernel_quadform, CriticOperator};
pub use quadrature::{gauss_jacobi_beta, gauss_legendre_rule, NormalRule, QuadratureRule};
