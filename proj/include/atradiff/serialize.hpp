#ifndef ATRADIFF_SERIALIZE_HPP_
#define ATRADIFF_SERIALIZE_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace atradiff {

using Bytes = std::vector<std::uint8_t>;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kMagic[4] = {'A', 'T', 'R', 'D'};
inline constexpr std::uint32_t kFormatVersion = 1;

// Little-endian append-only encoder for the "ATRD" checkpoint container.
class ByteWriter {
 public:
  // Writes magic + version + a four-character section tag.
  void header(std::string_view tag);

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void str(std::string_view s);
  void blob(const Bytes& b);
  void vec(const Eigen::VectorXd& v);
  // Row-major.
  void mat(const Eigen::MatrixXd& m);

  const Bytes& bytes() const { return out_; }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(const Bytes& in) : in_(in) {}

  // Validates magic + version and that the tag matches.
  void header(std::string_view tag);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  std::string str();
  Bytes blob();
  Eigen::VectorXd vec();
  Eigen::MatrixXd mat();

  bool done() const { return pos_ == in_.size(); }
  void expect_done() const;

 private:
  void need(std::size_t n) const;

  const Bytes& in_;
  std::size_t pos_ = 0;
};

void write_file(const std::filesystem::path& path, const Bytes& bytes);
Bytes read_file(const std::filesystem::path& path);

}  // namespace atradiff

#endif  // ATRADIFF_SERIALIZE_HPP_
