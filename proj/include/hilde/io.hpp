#ifndef HILDE_IO_HPP
#define HILDE_IO_HPP

#include <map>
#include <string>
#include <vector>

#include "hilde/critical_values.hpp"
#include "hilde/detect_short.hpp"
#include "hilde/types.hpp"

namespace hilde {

// Trace I/O.  CSV carries a mandatory `time,conductance` header; the binary
// format is a raw little-endian float64 stream with a text sidecar
// `<path>.meta` holding n, the sample rate and the provenance.
void write_trace_csv(const Trace& tr, const std::string& path);
Trace read_trace_csv(const std::string& path);
void write_trace_binary(const Trace& tr, const std::string& path);
Trace read_trace_binary(const std::string& path);

void write_signal_json(const PiecewiseSignal& sig, const std::string& path);
PiecewiseSignal read_signal_json(const std::string& path);

/// Idealization JSON: format_version, sample metadata and one record per
/// segment (start_s, end_s, level_nS, sd_nS, origin).  The variance signal,
/// when present, rides along as a parallel per-segment field.
void write_idealization_json(const Idealization& ideal, const std::string& path,
                             const PiecewiseSignal* variance = nullptr,
                             const std::vector<ShortEvent>* events = nullptr);
Idealization read_idealization_json(const std::string& path);

void write_critical_values(const CriticalValues& cv, const std::string& path);
CriticalValues read_critical_values(const std::string& path);

/// Flat key=value manifest records, written sorted for diffability.
void write_manifest(const std::map<std::string, std::string>& entries, const std::string& path);
std::map<std::string, std::string> read_manifest(const std::string& path);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace hilde

#endif
