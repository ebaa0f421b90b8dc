// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace realise {

/// Decodes UTF-8 into code points. Throws std::invalid_argument on malformed input.
std::u32string utf8_decode(std::string_view s);

void utf8_append(std::string& out, char32_t cp);

std::string utf8_encode(std::u32string_view s);

std::string utf8_encode(char32_t cp);

}  // namespace realise
