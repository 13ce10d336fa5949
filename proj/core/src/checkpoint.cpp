#include "cpflow/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "cpflow/errors.hpp"

namespace cpflow {

namespace {

constexpr char kMagic[8] = {'C', 'P', 'F', 'L', 'O', 'W', 'C', 'K'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

// Bounds-checked little-endian cursor; all failures carry the byte offset.
struct Reader {
  const std::string& buf;
  const std::string& path;
  size_t pos = 0;

  void need(size_t count, const char* what) const {
    if (pos + count > buf.size()) {
      throw ParseError(path + ": truncated checkpoint at byte " + std::to_string(pos) +
                       " reading " + what);
    }
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string bytes(size_t count, const char* what) {
    need(count, what);
    std::string s = buf.substr(pos, count);
    pos += count;
    return s;
  }
};

}  // namespace

const ArrayValue* CheckpointData::find(const std::string& name) const {
  for (const auto& kv : arrays) {
    if (kv.first == name) return &kv.second;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, data.version);
  put_u64(out, data.config_text.size());
  out += data.config_text;
  put_u64(out, data.step);
  put_u64(out, data.rng_state);
  put_u32(out, static_cast<uint32_t>(data.arrays.size()));
  for (const auto& kv : data.arrays) {
    put_u32(out, static_cast<uint32_t>(kv.first.size()));
    out += kv.first;
    const ArrayValue& a = kv.second;
    put_u32(out, static_cast<uint32_t>(a.rank()));
    for (long dim : a.shape()) put_u64(out, static_cast<uint64_t>(dim));
    for (long i = 0; i < a.size(); ++i) put_f64(out, a.data()[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw ParseError(path + ": cannot open checkpoint for writing");
  }
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) {
    throw ParseError(path + ": checkpoint write failed");
  }
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw ParseError(path + ": cannot open checkpoint");
  }
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf, path};
  std::string magic = r.bytes(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(path + ": not a checkpoint file (bad magic)");
  }
  CheckpointData data;
  data.version = r.u32("version");
  if (data.version != 1) {
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(data.version));
  }
  uint64_t config_len = r.u64("config length");
  data.config_text = r.bytes(config_len, "config text");
  data.step = r.u64("step");
  data.rng_state = r.u64("rng state");
  uint32_t n_arrays = r.u32("array count");
  data.arrays.reserve(n_arrays);
  for (uint32_t k = 0; k < n_arrays; ++k) {
    uint32_t name_len = r.u32("array name length");
    std::string name = r.bytes(name_len, "array name");
    uint32_t rank = r.u32("array rank");
    if (rank > 8) {
      throw ParseError(path + ": array '" + name + "' has implausible rank " +
                       std::to_string(rank));
    }
    std::vector<long> shape(rank);
    long total = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<long>(r.u64("array dim"));
      if (shape[i] < 0 || (total > 0 && shape[i] > (1L << 40) / total)) {
        throw ParseError(path + ": array '" + name + "' has implausible shape");
      }
      total *= shape[i];
    }
    std::vector<double> values(static_cast<size_t>(total));
    for (long i = 0; i < total; ++i) values[static_cast<size_t>(i)] = r.f64("array data");
    data.arrays.emplace_back(std::move(name), ArrayValue::from(std::move(shape), std::move(values)));
  }
  if (r.pos != buf.size()) {
    throw ParseError(path + ": trailing bytes after checkpoint payload");
  }
  return data;
}

}  // namespace cpflow
