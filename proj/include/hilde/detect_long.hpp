#ifndef HILDE_DETECT_LONG_HPP
#define HILDE_DETECT_LONG_HPP

#include <cstdint>
#include <vector>

#include "hilde/bessel_filter.hpp"
#include "hilde/critical_values.hpp"
#include "hilde/types.hpp"

namespace hilde {

/// Multiresolution test statistic on [i, j] (1-based, inclusive) against a
/// candidate level, skipping the first m observations of the interval so the
/// filter transient cannot bias the test.  Degenerate sample variance gives
/// +infinity unless the remaining observations equal the level exactly.
double jsmurf_stat(const Trace& tr, int i, int j, double level, int m);

/// Dyadic interval lengths 2^l with 2^l > m + 1 and 2^l <= n.
std::vector<int> dyadic_scales(int n, int m);

/// Scale-dependent critical values for the multiresolution test under the
/// filtered-noise null, quantile-balanced across scales at level alpha.
/// Deterministic given the seed; replications run in parallel.
CriticalValues calibrate_jsmurf(int n, const FilterKernel& k, double alpha,
                                const std::vector<int>& scales, int replications,
                                uint64_t seed, int threads = 0);

/// Step (a): minimal number of changes subject to the multiresolution
/// constraint over all dyadic-length intervals on which the candidate is
/// constant, then the constrained maximum-likelihood fit among candidates
/// with that many changes, computed by a pruned dynamic program.
Idealization fit(const Trace& tr, const FilterKernel& k, const CriticalValues& cv);

}  // namespace hilde

#endif
