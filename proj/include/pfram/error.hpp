#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace pfram {

// Base of everything the library throws on purpose. Anything else escaping
// a command is treated as an internal error by the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed files, mismatched image sets, invalid parameters.
class InputError : public Error {
 public:
  using Error::Error;
};

// Binary decode failure. Carries the byte offset where decoding stopped and,
// when known, the image whose record was being read.
class FormatError : public InputError {
 public:
  FormatError(const std::string& what, std::uint64_t offset,
              std::optional<std::string> image = std::nullopt)
      : InputError(compose(what, offset, image)),
        offset_(offset),
        image_(std::move(image)) {}

  std::uint64_t offset() const noexcept { return offset_; }
  const std::optional<std::string>& image() const noexcept { return image_; }

 private:
  static std::string compose(const std::string& what, std::uint64_t offset,
                             const std::optional<std::string>& image) {
    std::string msg = what + " (at byte offset " + std::to_string(offset);
    if (image) msg += ", image '" + *image + "'";
    return msg + ")";
  }

  std::uint64_t offset_;
  std::optional<std::string> image_;
};

}  // namespace pfram
