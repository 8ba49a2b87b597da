#pragma once

#include <stdexcept>
#include <string>

namespace blockfed {

// Base for every error raised by the library. Subclasses name the failing
// contract so callers (and the CLI exit-code mapping) can tell them apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class TapeError : public Error { using Error::Error; };
class MaskMismatchError : public Error { using Error::Error; };
class BlockError : public Error { using Error::Error; };
class SpecError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ProtocolError : public Error { using Error::Error; };
class PlanError : public Error { using Error::Error; };
class UndefinedGainError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };

// Raised by local training when a client has nothing to train on. The
// server treats it as "did not participate this round".
class ClientSkip : public Error { using Error::Error; };

}  // namespace blockfed
