// Copyright 2026 The ovfsim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ovfsim/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "ovfsim/error.hpp"

namespace ovfsim {

ReportRow make_row(std::string regime, const EvalReport& report, std::size_t nonconverged) {
  return {std::move(regime), report.sigma_d,      report.runs,     report.mean_accuracy,
          report.std_accuracy, report.ci95_halfwidth, report.mean_ekl, nonconverged};
}

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

double parse_number(std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty()) {
    throw ValidationError("not a number: '" + std::string(text) + "'");
  }
  return v;
}

namespace {

std::size_t parse_count(std::string_view text) {
  std::size_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty()) {
    throw ValidationError("not a count: '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  for (;;) {
    const auto comma = line.find(',');
    out.push_back(line.substr(0, comma));
    if (comma == std::string_view::npos) return out;
    line.remove_prefix(comma + 1);
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << kReportHeader << '\n';
  for (const auto& r : rows) {
    if (r.regime.find_first_of(",\n\r") != std::string::npos) {
      throw ValidationError("report: regime name '" + r.regime + "' contains a separator");
    }
    out << r.regime << ',' << format_number(r.sigma_d) << ',' << r.runs << ',' << format_number(r.mean_acc)
        << ',' << format_number(r.std_acc) << ',' << format_number(r.ci95) << ','
        << (r.mean_ekl ? format_number(*r.mean_ekl) : std::string()) << ',' << r.nonconverged << '\n';
  }
}

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  auto out = open_out(path);
  write_report_csv(out, rows);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<ReportRow> read_report_csv(std::istream& in) {
  std::vector<ReportRow> rows;
  std::string line;
  std::size_t n = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  ++n;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kReportHeader) throw ParseError(n, "unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 8) {
      throw ParseError(n, "expected 8 fields, got " + std::to_string(f.size()));
    }
    try {
      ReportRow r;
      r.regime = std::string(f[0]);
      if (r.regime.empty()) throw ValidationError("empty regime");
      r.sigma_d = parse_number(f[1]);
      r.runs = parse_count(f[2]);
      r.mean_acc = parse_number(f[3]);
      r.std_acc = parse_number(f[4]);
      r.ci95 = parse_number(f[5]);
      if (!f[6].empty()) r.mean_ekl = parse_number(f[6]);
      r.nonconverged = parse_count(f[7]);
      rows.push_back(std::move(r));
    } catch (const ValidationError& e) {
      throw ParseError(n, e.what());
    }
  }
  return rows;
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_report_csv(in);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& epochs) {
  auto out = open_out(path);
  out << kMetricsHeader << '\n';
  for (const auto& e : epochs) {
    out << e.epoch << ',' << format_number(e.learning_rate) << ',' << format_number(e.mean_loss) << ','
        << format_number(e.train_accuracy) << ','
        << (e.val_accuracy ? format_number(*e.val_accuracy) : std::string()) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Text rendering

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

std::string render_grid(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    width.resize(std::max(width.size(), row.size()));
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c) out << "  ";
      const auto& s = cells[r][c];
      // First column left-aligned, numbers right-aligned.
      if (c == 0) {
        out << s << std::string(width[c] - s.size(), ' ');
      } else {
        out << std::string(width[c] - s.size(), ' ') << s;
      }
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace

std::string render_table(const std::vector<ReportRow>& rows) {
  std::vector<std::vector<std::string>> cells{
      {"regime", "sigma_d", "runs", "mean_acc", "std_acc", "ci95", "mean_ekl", "nonconv"}};
  std::vector<std::string> regimes;
  std::vector<double> sigmas;
  for (const auto& r : rows) {
    cells.push_back({r.regime, fixed(r.sigma_d, 3), std::to_string(r.runs), fixed(r.mean_acc, 4),
                     fixed(r.std_acc, 4), fixed(r.ci95, 4), r.mean_ekl ? fixed(*r.mean_ekl, 4) : "n/a",
                     std::to_string(r.nonconverged)});
    if (std::find(regimes.begin(), regimes.end(), r.regime) == regimes.end()) regimes.push_back(r.regime);
    if (std::find(sigmas.begin(), sigmas.end(), r.sigma_d) == sigmas.end()) sigmas.push_back(r.sigma_d);
  }
  std::string out = render_grid(cells);
  if (regimes.size() < 2) return out;

  std::sort(sigmas.begin(), sigmas.end());
  for (const bool ekl : {false, true}) {
    std::vector<std::vector<std::string>> pivot{{"sigma_d"}};
    for (const auto& g : regimes) pivot[0].push_back(g);
    for (double s : sigmas) {
      std::vector<std::string> line{fixed(s, 3)};
      for (const auto& g : regimes) {
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const ReportRow& r) { return r.regime == g && r.sigma_d == s; });
        if (it == rows.end()) {
          line.push_back("");
        } else if (ekl) {
          line.push_back(it->mean_ekl ? fixed(*it->mean_ekl, 4) : "n/a");
        } else {
          line.push_back(fixed(it->mean_acc, 4));
        }
      }
      pivot.push_back(std::move(line));
    }
    out += ekl ? "\nmean EKL over correct predictions\n" : "\nmean accuracy\n";
    out += render_grid(pivot);
  }
  return out;
}

}  // namespace ovfsim
