#pragma once

namespace cvqr {

/// Standard normal CDF.
double normal_cdf(double z);

/// Standard normal quantile function. Throws DomainError outside (0,1).
double normal_quantile(double p);

}  // namespace cvqr
