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

// Binary checkpoint container; layout documented in docs/checkpoint-format.md.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ovfsim/models.hpp"

namespace ovfsim {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  ParamSet params;
  /// Free-form JSON object (regime, sigma_d, clean validation accuracy, ...).
  std::string metadata_json = "{}";
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws BadMagicError, TruncatedError or IoError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ovfsim
