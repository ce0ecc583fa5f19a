//! Low-level numerical building blocks shared by the statistical modules:
//! univariate/bivariate normal evaluations, Gauss-Legendre quadrature and
//! bracketed root-finding.

mod bvn;
mod normal;
mod quad;
mod roots;

pub use bvn::{bvn_cdf, bvn_pdf};
pub use normal::{norm_cdf, norm_pdf, norm_quantile, norm_sf};
pub use quad::{gauss_legendre, gauss_legendre_unit, gl64_unit};
pub use roots::{bisect, newton_bisect};
