// Copyright (c) 2026 The ParNet Engine Authors. All Rights Reserved.
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

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace parnet {

/// The `parnet` command line. args[0] is the program name. Returns the exit
/// code: 0 success, 1 runtime failure (one "error: <kind>: <message>" line on
/// `err`), 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Raw little-endian f32 tensor files with a "<path>.json" sidecar {"dims": [...]}.
struct RawTensor {
  std::vector<std::int64_t> dims;
  std::vector<float> data;
};
RawTensor read_raw_tensor(const std::string& path);
void write_raw_tensor(const std::string& path, const RawTensor& t);

}  // namespace parnet
