#pragma once

namespace adderkernel {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace adderkernel
