// Copyright 2026 The cermvs Authors. All Rights Reserved.
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

#pragma once

#include <stdexcept>
#include <string>

namespace cermvs {

enum class ErrorKind {
  kInvalidInput,
  kNumericalFailure,
  kIo,
};

// All library failures are reported through this exception. The CLI maps the
// kind onto its exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void ThrowInvalid(const std::string& what) {
  throw Error(ErrorKind::kInvalidInput, what);
}

[[noreturn]] inline void ThrowNumerical(const std::string& what) {
  throw Error(ErrorKind::kNumericalFailure, what);
}

[[noreturn]] inline void ThrowIo(const std::string& what) {
  throw Error(ErrorKind::kIo, what);
}

#define CERMVS_CHECK(cond, msg)                                   \
  do {                                                            \
    if (!(cond)) ::cermvs::ThrowInvalid(std::string(msg));        \
  } while (0)

}  // namespace cermvs
