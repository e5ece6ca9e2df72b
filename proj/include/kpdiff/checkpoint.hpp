#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "kpdiff/io.hpp"
#include "kpdiff/model.hpp"

namespace kpdiff {

inline constexpr char kCheckpointMagic[4] = {'K', 'P', 'D', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw Error(ErrorCode::Io, "truncated checkpoint");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Layout: magic, u32 version, u32 tensor count, then per tensor
/// u32 name length, name, u8 trainable, u64 rows, u64 cols, row-major f64 data.
/// Integers and floats are little-endian.
inline std::string serialize_params(const ParamStore& params) {
  std::string out(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& [name, m] : params.tensors()) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put<std::uint8_t>(out, params.trainable(name) ? 1 : 0);
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put<double>(out, m(r, c));
  }
  return out;
}

inline ParamStore deserialize_params(const std::string& bytes) {
  detail::Reader in(bytes);
  if (in.bytes(4) != std::string(kCheckpointMagic, 4)) throw Error(ErrorCode::Io, "not a checkpoint");
  if (const auto v = in.get<std::uint32_t>(); v != kCheckpointVersion) {
    throw Error(ErrorCode::Io, "unsupported checkpoint version " + std::to_string(v));
  }
  ParamStore p;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.bytes(in.get<std::uint32_t>());
    const bool trainable = in.get<std::uint8_t>() != 0;
    const auto rows = static_cast<Eigen::Index>(in.get<std::uint64_t>());
    const auto cols = static_cast<Eigen::Index>(in.get<std::uint64_t>());
    ad::Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = in.get<double>();
    p.add(name, std::move(m), trainable);
  }
  if (!in.done()) throw Error(ErrorCode::Io, "trailing bytes in checkpoint");
  return p;
}

inline void save_params(const std::string& path, const ParamStore& params) { write_file(path, serialize_params(params)); }
inline ParamStore load_params(const std::string& path) { return deserialize_params(read_file(path)); }

}  // namespace kpdiff
