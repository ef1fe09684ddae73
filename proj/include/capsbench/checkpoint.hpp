#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "capsbench/graph.hpp"
#include "capsbench/tensor.hpp"

namespace capsbench {

// Versioned binary model container:
//   magic "CAPS", format version u16 (LE), config record (u32 length +
//   key=value text), u32 blob count, then per blob: u32 name length + name,
//   u8 rank, u32 extents, IEEE-754 binary64 little-endian values.
// Round-trips are bit-exact.
struct Checkpoint {
    static constexpr uint16_t kVersion = 1;

    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> blobs;

    const Tensor* find(const std::string& name) const;
    // Throws DataError when absent.
    const Tensor& require(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<const Parameter*>& params);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace capsbench
