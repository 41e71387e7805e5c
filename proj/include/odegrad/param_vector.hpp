#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odegrad/errors.hpp"
#include "odegrad/vec.hpp"

namespace odegrad {

// One named block of a flat parameter vector.
struct ParamSegment {
  std::string name;
  int rows = 0;
  int cols = 1;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Flat parameter storage with a named-segment layout. Gradient cotangents
// reuse the same type, so segment lookup works on both.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(std::vector<ParamSegment> layout) : layout_(std::move(layout)) {
    std::size_t off = 0;
    for (auto& seg : layout_) {
      if (seg.rows < 0 || seg.cols < 0)
        throw Error(ErrorKind::InvalidArgument, "negative segment shape");
      seg.offset = off;
      off += seg.size();
    }
    values_.assign(off, 0.0);
    for (std::size_t i = 0; i < layout_.size(); ++i)
      for (std::size_t j = i + 1; j < layout_.size(); ++j)
        if (layout_[i].name == layout_[j].name)
          throw Error(ErrorKind::InvalidArgument, "duplicate segment name " + layout_[i].name);
  }

  // Zero-valued clone with the same layout.
  static ParamVector zeros_like(const ParamVector& other) {
    ParamVector p;
    p.layout_ = other.layout_;
    p.values_.assign(other.values_.size(), 0.0);
    return p;
  }

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  Vec& values() { return values_; }
  const Vec& values() const { return values_; }

  const std::vector<ParamSegment>& layout() const { return layout_; }

  const ParamSegment& segment_info(std::string_view name) const {
    for (const auto& seg : layout_)
      if (seg.name == name) return seg;
    throw Error(ErrorKind::InvalidArgument, "no segment named " + std::string(name));
  }

  std::span<double> segment(std::string_view name) {
    const auto& seg = segment_info(name);
    return {values_.data() + seg.offset, seg.size()};
  }

  std::span<const double> segment(std::string_view name) const {
    const auto& seg = segment_info(name);
    return {values_.data() + seg.offset, seg.size()};
  }

  void fill(double v) { values_.assign(values_.size(), v); }

  void add_scaled(const ParamVector& other, double alpha) {
    if (other.size() != size())
      throw Error(ErrorKind::DimensionMismatch, "param vector size mismatch");
    axpy(alpha, other.values_, values_);
  }

  void scale_by(double alpha) { scale(values_, alpha); }

  // --- binary blob: 16-byte header (8-byte magic, u32 version, u32 count),
  // then count little-endian f64 values.
  static constexpr char kMagic[8] = {'O', 'D', 'G', 'P', 'A', 'R', 'A', 'M'};
  static constexpr std::uint32_t kVersion = 1;

  void save_blob(std::ostream& out) const {
    static_assert(std::endian::native == std::endian::little,
                  "blob format assumes little-endian host");
    out.write(kMagic, 8);
    std::uint32_t ver = kVersion;
    std::uint32_t count = static_cast<std::uint32_t>(values_.size());
    out.write(reinterpret_cast<const char*>(&ver), 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(values_.data()),
              static_cast<std::streamsize>(values_.size() * sizeof(double)));
  }

  // Loads values into an existing layout; the count must match.
  void load_blob(std::istream& in) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
      throw Error(ErrorKind::InvalidArgument, "bad parameter blob magic");
    std::uint32_t ver = 0, count = 0;
    in.read(reinterpret_cast<char*>(&ver), 4);
    in.read(reinterpret_cast<char*>(&count), 4);
    if (!in || ver != kVersion)
      throw Error(ErrorKind::InvalidArgument, "unsupported parameter blob version");
    if (count != values_.size())
      throw Error(ErrorKind::DimensionMismatch,
                  "blob holds " + std::to_string(count) + " values, layout expects " +
                      std::to_string(values_.size()));
    in.read(reinterpret_cast<char*>(values_.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw Error(ErrorKind::InvalidArgument, "truncated parameter blob");
  }

 private:
  Vec values_;
  std::vector<ParamSegment> layout_;
};

}  // namespace odegrad
