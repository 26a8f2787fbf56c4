#pragma once

namespace cpda {
inline constexpr const char* kVersion = "0.1.0";
}
