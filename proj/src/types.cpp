#include "hilde/types.hpp"

#include <algorithm>
#include <cmath>

namespace hilde {

int PiecewiseSignal::segment_at(double t) const {
  // First k with tau_{k+1} > t; change_times is sorted.
  const double* begin = change_times.data();
  const double* end = begin + change_times.size();
  return static_cast<int>(std::upper_bound(begin, end, t) - begin);
}

void PiecewiseSignal::validate(bool require_distinct_levels) const {
  const int K = num_changes();
  if (levels.size() != K + 1 || sds.size() != K + 1)
    throw InputError("PiecewiseSignal: needs K+1 levels and sds for K changes");
  if (!(end_time > 0.0) || !std::isfinite(end_time))
    throw InputError("PiecewiseSignal: end_time must be positive and finite");
  for (int k = 0; k < K; ++k) {
    if (!(change_times[k] < end_time))
      throw InputError("PiecewiseSignal: change times must lie before end_time");
    if (k > 0 && !(change_times[k] > change_times[k - 1]))
      throw InputError("PiecewiseSignal: change times must be strictly increasing");
  }
  for (int k = 0; k <= K; ++k) {
    if (!std::isfinite(levels[k]) || !std::isfinite(sds[k]) || sds[k] < 0.0)
      throw InputError("PiecewiseSignal: levels must be finite, sds finite and >= 0");
    if (require_distinct_levels && k < K && levels[k] == levels[k + 1])
      throw InputError("PiecewiseSignal: adjacent levels must differ");
  }
}

void HmmSpec::validate() const {
  const int S = num_states();
  if (state_sds.size() != S || dwell_rates.size() != S ||
      transition_probs.rows() != S || transition_probs.cols() != S)
    throw InputError("HmmSpec: inconsistent dimensions");
  for (int s = 0; s < S; ++s) {
    if (!(dwell_rates[s] > 0.0)) throw InputError("HmmSpec: dwell rates must be positive");
    if (transition_probs(s, s) != 0.0) throw InputError("HmmSpec: diagonal must be zero");
    double row = 0.0;
    for (int t = 0; t < S; ++t) {
      if (transition_probs(s, t) < 0.0) throw InputError("HmmSpec: negative probability");
      row += transition_probs(s, t);
    }
    if (S > 1 && std::abs(row - 1.0) > 1e-12)
      throw InputError("HmmSpec: rows must sum to one");
  }
}

void Idealization::sync_flags() {
  origins.resize(signal.num_changes(), ChangeOrigin::Multiresolution);
  deconvolved.resize(signal.num_changes(), false);
  sd_inherited.resize(signal.num_segments(), false);
  if (segment_residual_sd.size() != signal.num_segments())
    segment_residual_sd = Eigen::VectorXd::Zero(signal.num_segments());
}

const char* to_string(ChangeOrigin o) {
  return o == ChangeOrigin::Multiresolution ? "multiresolution" : "local_test";
}

}  // namespace hilde
