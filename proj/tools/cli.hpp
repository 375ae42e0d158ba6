// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace modkit::cli {

/// Exit codes: 0 ok, 1 usage, 2 data/parse/integrity, 3 invariant violation.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace modkit::cli
