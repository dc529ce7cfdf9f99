/*
 * Copyright 2026 GFDANN Toolkit Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace gfdann {

// Base class for all toolkit errors.  Subclasses map onto process exit
// codes in the command line driver: ConfigError -> 2, DataError and
// DimensionError -> 3, NumericalError -> 4.
class GfdannError : public std::runtime_error {
 public:
  explicit GfdannError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid user-supplied configuration or out-of-contract call arguments.
class ConfigError : public GfdannError {
 public:
  explicit ConfigError(const std::string& what) : GfdannError(what) {}
};

// Missing, malformed, or inconsistent data files and datasets.
class DataError : public GfdannError {
 public:
  explicit DataError(const std::string& what) : GfdannError(what) {}
};

// Shape or size mismatch between tensors handed to an operation.
class DimensionError : public GfdannError {
 public:
  explicit DimensionError(const std::string& what) : GfdannError(what) {}
};

// Numeric breakdown: non-finite values, failed factorizations, or
// iterative solvers that do not converge.
class NumericalError : public GfdannError {
 public:
  explicit NumericalError(const std::string& what) : GfdannError(what) {}
};

}  // namespace gfdann
