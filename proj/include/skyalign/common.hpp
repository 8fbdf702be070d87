#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace skyalign {

// Base error. Every failure the library reports derives from this so the CLI
// can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed config, flags, or files. CLI exit 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or malformed data files. CLI exit 3.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or degenerate geometry inside numerical code. CLI exit 4.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DegenerateAzimuth : public NumericError {
 public:
  using NumericError::NumericError;
};

class ManifestError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class BatchTooLarge : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NormDegenerate : public NumericError {
 public:
  using NumericError::NumericError;
};

class AllMasked : public NumericError {
 public:
  using NumericError::NumericError;
};

class DimMismatch : public DataError {
 public:
  using DataError::DataError;
};

class DimTooLarge : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class UnknownQuery : public DataError {
 public:
  using DataError::DataError;
};

class IdMismatch : public DataError {
 public:
  using DataError::DataError;
};

enum class ViewKind : std::uint8_t { satellite = 0, drone = 1 };

inline std::string_view to_string(ViewKind k) {
  return k == ViewKind::satellite ? "sat" : "drone";
}

inline ViewKind parse_view_kind(std::string_view s) {
  if (s == "sat" || s == "satellite") return ViewKind::satellite;
  if (s == "drone") return ViewKind::drone;
  throw FormatError("unknown view kind '" + std::string(s) + "'");
}

using Rng = std::mt19937_64;

// Independent stream derived from (seed, stream index); used for per-building
// generation and for splitting one run seed into model/sampler/augmentation
// streams.
inline Rng make_substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x5ca1ab1eu};
  return Rng(seq);
}

}  // namespace skyalign
