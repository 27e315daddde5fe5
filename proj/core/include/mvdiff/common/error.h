// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mvdiff {

// Shape or size contract violated by the caller.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numeric operation produced NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Geometry for which the requested quantity is undefined.
class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace mvdiff
