// Copyright 2026 The Calibrar Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CALIBRAR_ERROR_HPP_
#define CALIBRAR_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace calibrar {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Array shapes do not line up for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// An argument is outside its documented domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed file content or schema violation.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Bad experiment configuration: unknown key, unparsable value, missing input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace calibrar

#endif  // CALIBRAR_ERROR_HPP_
