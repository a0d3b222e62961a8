#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

#include "distillkit/error.hpp"
#include "distillkit/harness.hpp"

namespace distillkit {

ReportFormat parse_report_format(std::string_view s) {
  if (s == "table") return ReportFormat::table;
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw ConfigError("unknown report format '" + std::string(s) + "'");
}

namespace {

// Shortest text that parses back to the same double.
std::string exact(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

template <typename T> T parse_number(const std::string &s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw InvalidArgumentError("bad number '" + s + "' in csv report");
  return v;
}

} // namespace

std::string report(std::vector<ExperimentResult> results, ReportFormat format) {
  std::stable_sort(results.begin(), results.end(), [](const auto &a, const auto &b) {
    return a.accuracy_mean > b.accuracy_mean;
  });
  std::ostringstream out;
  switch (format) {
  case ReportFormat::csv:
    out << "name,accuracy_mean,accuracy_std,class_mean_accuracy,trainable_params,runs\n";
    for (const auto &r : results)
      out << csv_field(r.name) << ',' << exact(r.accuracy_mean) << ',' << exact(r.accuracy_std)
          << ',' << exact(r.class_mean_accuracy) << ',' << r.trainable_params << ','
          << r.runs.size() << '\n';
    break;
  case ReportFormat::json: {
    auto arr = nlohmann::json::array();
    for (const auto &r : results) arr.push_back(to_json(r));
    out << arr.dump(2) << '\n';
    break;
  }
  case ReportFormat::table: {
    std::size_t width = 4;
    for (const auto &r : results) width = std::max(width, r.name.size());
    char line[256];
    std::snprintf(line, sizeof line, "%-*s  %18s  %10s  %12s\n", static_cast<int>(width), "Name",
                  "Accuracy (%)", "Class-mean", "Params (M)");
    out << line << std::string(width + 48, '-') << '\n';
    for (const auto &r : results) {
      char acc[64];
      std::snprintf(acc, sizeof acc, "%.2f +/- %.2f", 100.0 * r.accuracy_mean,
                    100.0 * r.accuracy_std);
      std::snprintf(line, sizeof line, "%-*s  %18s  %10.2f  %12.4f\n", static_cast<int>(width),
                    r.name.c_str(), acc, 100.0 * r.class_mean_accuracy,
                    static_cast<double>(r.trainable_params) / 1e6);
      out << line;
    }
    break;
  }
  }
  return out.str();
}

std::vector<ExperimentResult> parse_report_csv(std::string_view csv) {
  std::vector<ExperimentResult> rows;
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw InvalidArgumentError("csv report row has " + std::to_string(f.size()) + " fields");
    ExperimentResult r;
    r.name = f[0];
    r.accuracy_mean = parse_number<double>(f[1]);
    r.accuracy_std = parse_number<double>(f[2]);
    r.class_mean_accuracy = parse_number<double>(f[3]);
    r.trainable_params = parse_number<std::int64_t>(f[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

} // namespace distillkit
