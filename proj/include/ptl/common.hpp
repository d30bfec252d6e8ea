#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ptl {

namespace fs = std::filesystem;

// Error taxonomy shared by every module. The CLI maps kinds onto exit
// statuses: input/config/shape/format/io/digest -> 2, lock -> 3,
// divergence -> 1.
enum class ErrorKind { Input, Config, Shape, Format, Io, Divergence, Digest, Lock };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_status() const noexcept;

 private:
  ErrorKind kind_;
};

#define PTL_DEFINE_ERROR(Name, Kind) \
  struct Name : Error {              \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  }

PTL_DEFINE_ERROR(InputError, Input);
PTL_DEFINE_ERROR(ConfigError, Config);
PTL_DEFINE_ERROR(ShapeError, Shape);
PTL_DEFINE_ERROR(FormatError, Format);
PTL_DEFINE_ERROR(IoError, Io);
PTL_DEFINE_ERROR(DivergenceError, Divergence);
PTL_DEFINE_ERROR(DigestMismatchError, Digest);
PTL_DEFINE_ERROR(LockError, Lock);

#undef PTL_DEFINE_ERROR

// Incremental SHA-256 (OpenSSL EVP underneath).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::byte> bytes);
  void update(std::string_view text);
  std::string hex_digest();

 private:
  struct Ctx;
  std::unique_ptr<Ctx> ctx_;
};

std::string sha256_hex(std::string_view text);
std::string sha256_file(const fs::path& path);

// Short digest used to stamp artifacts (first 16 hex chars of SHA-256).
std::string short_digest(std::string_view text);

// splitmix64 mixing of a base seed with a tag; used to give every network,
// shuffle and augmentation its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

std::string read_text_file(const fs::path& path);
// Writes via a temporary file and rename so readers never observe a torn file.
void write_text_file(const fs::path& path, std::string_view contents);

}  // namespace ptl
