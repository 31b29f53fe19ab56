// Copyright 2026 The FEAT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace feat {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions or invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Layer or scope index outside [1, L].
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Feature override whose shape does not match the layer it replaces.
class InjectionError : public Error {
 public:
  using Error::Error;
};

/// Generic tensor shape mismatch (blend inputs, losses, metrics).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Mask whose resolution does not match the blend layer.
class MaskError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Text token missing from an embedder's vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Edit model trained against a different generator.
class StaleModelError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (tensor files, archives, manifests).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace feat
