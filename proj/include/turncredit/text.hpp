// Copyright 2026 The turncredit Authors
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
#include <string>
#include <string_view>
#include <vector>

namespace turncredit {

// ASCII lowercase; bytes >= 0x80 pass through untouched.
std::string to_lower(std::string_view s);

std::string_view trim(std::string_view s);

// Lowercase, trim, and collapse internal whitespace runs to a single space.
std::string normalize_answer(std::string_view s);

// True iff `needle` (normalized) occurs in `haystack` (normalized). Empty
// needles never match.
bool contains_normalized(std::string_view haystack, std::string_view needle);

bool starts_with(std::string_view s, std::string_view prefix);

std::vector<std::string> split(std::string_view s, char sep);

// Lowercased alphanumeric terms; punctuation and whitespace separate terms.
std::vector<std::string> word_terms(std::string_view s);

// 64-bit FNV-1a, used for fixture checksums and request hashes.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace turncredit
