#pragma once

#include <stdexcept>
#include <string>

namespace kwspot {

// Base for all library failures. Subclasses encode the failure kind so
// callers can map them to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define KWSPOT_ERROR_KIND(NAME)                                   \
  class NAME : public Error {                                     \
   public:                                                        \
    explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
  }

KWSPOT_ERROR_KIND(DegenerateGeometry);
KWSPOT_ERROR_KIND(InvalidGrid);
KWSPOT_ERROR_KIND(EmptyMask);
KWSPOT_ERROR_KIND(SchemaError);
KWSPOT_ERROR_KIND(InvariantError);
KWSPOT_ERROR_KIND(IoError);
KWSPOT_ERROR_KIND(AtlasGenerationError);
KWSPOT_ERROR_KIND(PlacementError);
KWSPOT_ERROR_KIND(ShapeError);
KWSPOT_ERROR_KIND(VocabError);
KWSPOT_ERROR_KIND(ConfigError);
KWSPOT_ERROR_KIND(EvalError);
KWSPOT_ERROR_KIND(NonFiniteLoss);
KWSPOT_ERROR_KIND(DegenerateBox);

#undef KWSPOT_ERROR_KIND

}  // namespace kwspot
