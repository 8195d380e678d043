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

#pragma once

namespace ovfsim {

/// Keeps large activation buffers on the heap instead of fresh mmap'd pages.
/// Without it glibc maps and unmaps every multi-megabyte temporary, and page
/// faults dominate inference time. No-op on other C libraries.
void tune_allocator();

}  // namespace ovfsim
