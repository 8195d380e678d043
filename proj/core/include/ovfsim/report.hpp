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

// CSV reports. Numbers are written with 9 significant digits and '.' as the
// decimal point regardless of the process locale.

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ovfsim/evaluation.hpp"
#include "ovfsim/training.hpp"

namespace ovfsim {

struct ReportRow {
  std::string regime;
  double sigma_d = 0.0;
  std::size_t runs = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  double ci95 = 0.0;
  /// Empty field in the CSV when undefined.
  std::optional<double> mean_ekl;
  std::size_t nonconverged = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

inline constexpr const char* kReportHeader =
    "regime,sigma_d,runs,mean_acc,std_acc,ci95,mean_ekl,nonconverged";

ReportRow make_row(std::string regime, const EvalReport& report, std::size_t nonconverged = 0);

/// Shortest round-trippable form at 9 significant digits.
std::string format_number(double value);
/// Strict: the whole field must parse. Throws ValidationError.
double parse_number(std::string_view text);

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);
void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows);
/// Throws ParseError carrying the 1-based line number of the bad row.
std::vector<ReportRow> read_report_csv(std::istream& in);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

inline constexpr const char* kMetricsHeader = "epoch,learning_rate,mean_loss,train_accuracy,val_accuracy";
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& epochs);

/// Plain-text table of every row, followed by sigma x regime pivots of
/// mean accuracy and mean EKL when more than one regime is present.
std::string render_table(const std::vector<ReportRow>& rows);

}  // namespace ovfsim
