#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cpflow/array.hpp"

namespace cpflow {

// On-disk training snapshot. One file, all integers and doubles little-endian:
//
//   bytes 0-7   magic "CPFLOWCK"
//   u32         format version (currently 1)
//   u64         config byte count, then that many bytes of `key = value` text
//   u64         optimizer step counter
//   u64         rng state (the run seed; per-step streams derive from it)
//   u32         array count
//   per array:  u32 name length, name bytes, u32 rank, i64 dims[rank],
//               f64 data[prod(dims)] as raw IEEE-754 bit patterns
//
// Field order inside `arrays` is preserved verbatim, so save -> load -> save
// reproduces the file byte for byte.
struct CheckpointData {
  uint32_t version = 1;
  std::string config_text;
  uint64_t step = 0;
  uint64_t rng_state = 0;
  std::vector<std::pair<std::string, ArrayValue>> arrays;

  // nullptr when absent; arrays are looked up by exact name.
  const ArrayValue* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);

// ParseError on bad magic, unsupported version, or truncation, naming the
// path and offset.
CheckpointData load_checkpoint(const std::string& path);

}  // namespace cpflow
