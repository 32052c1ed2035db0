// Copyright 2026  muquant authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// muquant/log.hpp

#ifndef MUQUANT_LOG_HPP_
#define MUQUANT_LOG_HPP_

#include <cstddef>
#include <string_view>

namespace muquant {

void log_info(std::string_view message);
void log_warning(std::string_view message);
/// Suppresses output; warnings are still counted.
void set_log_quiet(bool quiet);
std::size_t warning_count();

}  // namespace muquant

#endif  // MUQUANT_LOG_HPP_
