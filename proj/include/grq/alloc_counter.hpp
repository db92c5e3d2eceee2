#pragma once

#include <cstdint>

namespace grq {
namespace alloc_probe {

// Heap-allocation counter, fed by an optional operator-new override TU
// (tests/alloc_hook.cpp). Binaries that do not link the hook read 0 and
// report the probe as inactive; the library itself never depends on it.
inline std::uint64_t (*reader)() = nullptr;

inline bool active() { return reader != nullptr; }
inline std::uint64_t count() { return reader ? reader() : 0; }

}  // namespace alloc_probe
}  // namespace grq
