#include "hilde/io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace hilde {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw InputError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw InputError("cannot open: " + path);
  return in;
}

}  // namespace

void write_trace_csv(const Trace& tr, const std::string& path) {
  auto out = open_out(path);
  out << "time,conductance\n";
  const double fs = tr.sample_rate;
  for (int i = 1; i <= tr.n(); ++i)
    out << format_double(i / fs) << "," << format_double(tr.samples[i - 1]) << "\n";
  if (!out) throw InputError("write failed: " + path);
}

Trace read_trace_csv(const std::string& path) {
  auto in = open_in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t pos = 0;
  auto fail = [&](const std::string& what, size_t at) {
    throw InputError(path + ": " + what + " at byte " + std::to_string(at));
  };
  const std::string header = "time,conductance";
  if (content.compare(0, header.size(), header) != 0) fail("missing 'time,conductance' header", 0);
  pos = header.size();
  if (pos < content.size() && content[pos] == '\r') ++pos;
  if (pos >= content.size() || content[pos] != '\n') fail("missing newline after header", pos);
  ++pos;

  std::vector<double> times, values;
  while (pos < content.size()) {
    if (content[pos] == '\n') {
      ++pos;
      continue;
    }
    const size_t line_start = pos;
    size_t comma = content.find(',', pos);
    size_t eol = content.find('\n', pos);
    if (eol == std::string::npos) eol = content.size();
    if (comma == std::string::npos || comma > eol) fail("missing comma", line_start);
    char* end = nullptr;
    const double t = std::strtod(content.c_str() + pos, &end);
    if (end != content.c_str() + comma) fail("malformed time field", pos);
    const double v = std::strtod(content.c_str() + comma + 1, &end);
    size_t val_end = eol;
    while (val_end > comma + 1 && (content[val_end - 1] == '\r')) --val_end;
    if (end != content.c_str() + val_end) fail("malformed conductance field", comma + 1);
    times.push_back(t);
    values.push_back(v);
    pos = eol + (eol < content.size() ? 1 : 0);
  }
  if (times.size() < 2) throw InputError(path + ": need at least two samples");
  Trace tr;
  tr.samples = Eigen::Map<Eigen::VectorXd>(values.data(), values.size());
  tr.sample_rate = 1.0 / (times[1] - times[0]);
  tr.provenance = "file:" + path;
  return tr;
}

void write_trace_binary(const Trace& tr, const std::string& path) {
  auto out = open_out(path, true);
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(tr.samples.data()),
            static_cast<std::streamsize>(tr.n() * sizeof(double)));
  if (!out) throw InputError("write failed: " + path);
  auto meta = open_out(path + ".meta");
  meta << "format_version 1\n";
  meta << "n " << tr.n() << "\n";
  meta << "sample_rate_hz " << format_double(tr.sample_rate) << "\n";
  meta << "provenance " << tr.provenance << "\n";
}

Trace read_trace_binary(const std::string& path) {
  auto meta = open_in(path + ".meta");
  std::string key;
  int version = 0;
  long n = 0;
  Trace tr;
  while (meta >> key) {
    if (key == "format_version")
      meta >> version;
    else if (key == "n")
      meta >> n;
    else if (key == "sample_rate_hz")
      meta >> tr.sample_rate;
    else if (key == "provenance") {
      std::getline(meta, tr.provenance);
      if (!tr.provenance.empty() && tr.provenance.front() == ' ')
        tr.provenance.erase(tr.provenance.begin());
    } else {
      throw InputError(path + ".meta: unknown key '" + key + "'");
    }
  }
  if (version != 1) throw InputError(path + ".meta: unsupported format_version");
  if (n < 1 || !(tr.sample_rate > 0.0)) throw InputError(path + ".meta: bad metadata");
  auto in = open_in(path, true);
  tr.samples.resize(n);
  in.read(reinterpret_cast<char*>(tr.samples.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
    throw InputError(path + ": truncated sample stream");
  return tr;
}

void write_signal_json(const PiecewiseSignal& sig, const std::string& path) {
  json j;
  j["format_version"] = 1;
  j["tau"] = std::vector<double>(sig.change_times.data(),
                                 sig.change_times.data() + sig.change_times.size());
  j["levels"] = std::vector<double>(sig.levels.data(), sig.levels.data() + sig.levels.size());
  j["sds"] = std::vector<double>(sig.sds.data(), sig.sds.data() + sig.sds.size());
  j["end_time"] = sig.end_time;
  auto out = open_out(path);
  out << j.dump(1) << "\n";
}

PiecewiseSignal read_signal_json(const std::string& path) {
  auto in = open_in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what() + " at byte " + std::to_string(e.byte));
  }
  PiecewiseSignal sig;
  const auto tau = j.at("tau").get<std::vector<double>>();
  const auto levels = j.at("levels").get<std::vector<double>>();
  const auto sds = j.at("sds").get<std::vector<double>>();
  sig.change_times = Eigen::Map<const Eigen::VectorXd>(tau.data(), tau.size());
  sig.levels = Eigen::Map<const Eigen::VectorXd>(levels.data(), levels.size());
  sig.sds = Eigen::Map<const Eigen::VectorXd>(sds.data(), sds.size());
  sig.end_time = j.at("end_time").get<double>();
  sig.validate(false);
  return sig;
}

void write_idealization_json(const Idealization& ideal, const std::string& path,
                             const PiecewiseSignal* variance,
                             const std::vector<ShortEvent>* events) {
  const auto& sig = ideal.signal;
  const int K = sig.num_changes();
  json segments = json::array();
  for (int s = 0; s <= K; ++s) {
    json seg;
    seg["start_s"] = (s == 0) ? 0.0 : sig.change_times[s - 1];
    seg["end_s"] = (s == K) ? sig.end_time : sig.change_times[s];
    seg["level_nS"] = sig.levels[s];
    seg["sd_nS"] = sig.sds[s];
    seg["origin"] = (s == 0) ? "start" : to_string(ideal.origins[s - 1]);
    if (s > 0 && s - 1 < static_cast<int>(ideal.deconvolved.size()))
      seg["deconvolved"] = static_cast<bool>(ideal.deconvolved[s - 1]);
    if (variance) seg["variance_nS2"] = variance->levels[s];
    segments.push_back(seg);
  }
  json j;
  j["format_version"] = 1;
  j["end_time_s"] = sig.end_time;
  j["tests_rejected"] = ideal.tests_rejected;
  j["segments"] = segments;
  if (events) {
    json evs = json::array();
    for (const auto& ev : *events) {
      json e;
      e["tau_left_s"] = ev.tau_left;
      e["tau_right_s"] = ev.tau_right;
      e["statistic"] = ev.statistic;
      e["replaces_change"] = ev.replaces_change;
      if (ev.replaces_change) e["replaced_tau_s"] = ev.replaced_tau;
      evs.push_back(e);
    }
    j["short_events"] = evs;
  }
  auto out = open_out(path);
  out << j.dump(1) << "\n";
}

Idealization read_idealization_json(const std::string& path) {
  auto in = open_in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what() + " at byte " + std::to_string(e.byte));
  }
  if (j.at("format_version").get<int>() != 1)
    throw InputError(path + ": unsupported format_version");
  const auto& segments = j.at("segments");
  const int S = static_cast<int>(segments.size());
  if (S < 1) throw InputError(path + ": no segments");
  Idealization ideal;
  ideal.signal.end_time = j.at("end_time_s").get<double>();
  ideal.signal.change_times.resize(S - 1);
  ideal.signal.levels.resize(S);
  ideal.signal.sds.resize(S);
  ideal.origins.resize(S - 1);
  for (int s = 0; s < S; ++s) {
    const auto& seg = segments[s];
    ideal.signal.levels[s] = seg.at("level_nS").get<double>();
    ideal.signal.sds[s] = seg.at("sd_nS").get<double>();
    if (s > 0) {
      ideal.signal.change_times[s - 1] = seg.at("start_s").get<double>();
      ideal.origins[s - 1] = seg.at("origin").get<std::string>() == "local_test"
                                 ? ChangeOrigin::LocalTest
                                 : ChangeOrigin::Multiresolution;
    }
  }
  ideal.tests_rejected = j.value("tests_rejected", 0);
  ideal.sync_flags();
  ideal.signal.validate(false);
  return ideal;
}

void write_critical_values(const CriticalValues& cv, const std::string& path) {
  auto out = open_out(path);
  out << cv.serialize();
}

CriticalValues read_critical_values(const std::string& path) {
  auto in = open_in(path);
  return CriticalValues::deserialize(in);
}

void write_manifest(const std::map<std::string, std::string>& entries, const std::string& path) {
  auto out = open_out(path);
  out << "format_version 1\n";
  for (const auto& [key, value] : entries) out << key << " = " << value << "\n";
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  auto in = open_in(path);
  std::map<std::string, std::string> entries;
  std::string line;
  std::getline(in, line);  // format_version
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    entries[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return entries;
}

}  // namespace hilde
