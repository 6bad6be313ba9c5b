#pragma once

#include <string>
#include <string_view>

namespace evicode::utf8 {

/// Decodes UTF-8 into scalar values. Malformed sequences become U+FFFD.
std::u32string decode(std::string_view text);

std::string encode(std::u32string_view text);
std::string encode(char32_t cp);

bool is_space(char32_t cp) noexcept;
bool is_ascii_alnum(char32_t cp) noexcept;

/// Number of scalar values in `text`.
std::size_t length(std::string_view text);

std::string trim(std::string_view text);

}  // namespace evicode::utf8
