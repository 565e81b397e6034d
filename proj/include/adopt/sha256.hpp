#pragma once

#include <string>
#include <string_view>

namespace adopt {

/// SHA-256 digest of the input, as a 64-char lowercase hex string.
std::string sha256_hex(std::string_view data);

}  // namespace adopt
