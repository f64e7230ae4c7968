#include "changeseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace changeseg {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kEndMarker = 0x454e44454e44ull;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("corrupt checkpoint: unexpected end of file");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ull << 30)) throw std::runtime_error("corrupt checkpoint: absurd string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("corrupt checkpoint: unexpected end of file");
  return s;
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  put<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_doubles(std::istream& is, std::vector<double>& out, std::size_t expected) {
  const auto n = get<std::uint64_t>(is);
  if (n != expected) throw std::runtime_error("corrupt checkpoint: tensor size mismatch");
  out.resize(n);
  is.read(reinterpret_cast<char*>(out.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("corrupt checkpoint: unexpected end of file");
}

void read_header(std::istream& is, CheckpointMeta& meta) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("corrupt checkpoint: bad magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint version mismatch: file has version " +
                             std::to_string(version) + ", this build expects " +
                             std::to_string(kCheckpointVersion));
  meta.config = from_text(get_string(is));
  meta.iteration = get<std::int64_t>(is);
  meta.has_optimizer = get<std::uint8_t>(is) != 0;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedParams& params, const AdamW* opt,
                     std::int64_t iteration, const FullConfig& cfg) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, 8);
  put<std::uint32_t>(os, kCheckpointVersion);
  put_string(os, to_text(cfg));
  put<std::int64_t>(os, iteration);
  const bool has_opt = opt != nullptr && opt->m.size() == params.size();
  put<std::uint8_t>(os, has_opt ? 1 : 0);

  put<std::uint64_t>(os, params.size());
  for (const auto& [name, t] : params) {
    put_string(os, name);
    const auto& shape = t.shape();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put<std::int32_t>(os, d);
    put_doubles(os, t.values());
  }

  if (has_opt) {
    put<std::int64_t>(os, opt->step_count);
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_doubles(os, opt->m[i]);
      put_doubles(os, opt->v[i]);
    }
  }
  put<std::uint64_t>(os, kEndMarker);
  if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, const NamedParams& params, AdamW* opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
  CheckpointMeta meta;
  read_header(is, meta);

  const auto count = get<std::uint64_t>(is);
  if (count != params.size())
    throw std::runtime_error("checkpoint parameter mismatch: file has " + std::to_string(count) +
                             " tensors, model has " + std::to_string(params.size()));
  for (const auto& [name, t] : params) {
    const std::string stored = get_string(is);
    if (stored != name)
      throw std::runtime_error("checkpoint parameter mismatch: expected " + name + ", found " +
                               stored);
    const auto ndim = get<std::uint32_t>(is);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = get<std::int32_t>(is);
    if (shape != t.shape())
      throw std::runtime_error("checkpoint parameter mismatch: shape differs for " + name);
    get_doubles(is, const_cast<Tensor&>(t).mutable_values(), t.values().size());
  }

  if (meta.has_optimizer) {
    const auto step_count = get<std::int64_t>(is);
    if (opt != nullptr) {
      opt->init(params);  // sizes the moment buffers
      opt->step_count = step_count;
      for (std::size_t i = 0; i < params.size(); ++i) {
        get_doubles(is, opt->m[i], opt->m[i].size());
        get_doubles(is, opt->v[i], opt->v[i].size());
      }
    } else {
      for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<double> skip;
        get_doubles(is, skip, params[i].second.values().size());
        get_doubles(is, skip, params[i].second.values().size());
      }
    }
  }
  if (get<std::uint64_t>(is) != kEndMarker)
    throw std::runtime_error("corrupt checkpoint: end marker missing");
  return meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
  CheckpointMeta meta;
  read_header(is, meta);
  return meta;
}

}  // namespace changeseg
