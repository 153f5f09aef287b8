// Copyright 2026 The N2UQ Authors. All Rights Reserved.
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

#include <ostream>

namespace n2uq::cli {

// Entry point behind the `n2uq` binary. Returns the process exit code:
// 0 success, 1 contract/format/usage errors, 2 failed selfcheck.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace n2uq::cli
