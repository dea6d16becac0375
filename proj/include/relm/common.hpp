/* relm - reusing a monolingual language model for low-resource translation.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace relm {

/// Error category carried by every relm exception so the CLI can map
/// failures to structured single-line reports.
enum class ErrorCode {
  Io,          // file missing/unreadable/unwritable
  Decode,      // invalid UTF-8 in an input file
  Config,      // bad hyperparameter, unknown key, invariant violation
  Shape,       // tensor shape mismatch
  Vocab,       // vocabulary/model inconsistency
  Checkpoint,  // bad magic/version/truncation
  Data,        // empty/misaligned corpora and similar input problems
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const { return code_; }
  const char* code_name() const {
    switch (code_) {
      case ErrorCode::Io: return "io";
      case ErrorCode::Decode: return "decode";
      case ErrorCode::Config: return "config";
      case ErrorCode::Shape: return "shape";
      case ErrorCode::Vocab: return "vocab";
      case ErrorCode::Checkpoint: return "checkpoint";
      case ErrorCode::Data: return "data";
    }
    return "unknown";
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

// ---------------------------------------------------------------------------
// UTF-8
// ---------------------------------------------------------------------------

/// Splits a UTF-8 string into code points (each returned as the raw byte
/// sequence of one code point). Throws Decode on malformed input.
std::vector<std::string> utf8_codepoints(std::string_view s);

/// True when `s` is well-formed UTF-8.
bool utf8_valid(std::string_view s);

/// Number of code points in a well-formed UTF-8 string.
std::size_t utf8_length(std::string_view s);

// ---------------------------------------------------------------------------
// Hashing (provenance + rng seeding; not cryptographic)
// ---------------------------------------------------------------------------

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

/// FNV-1a over a whole file's bytes, as a 16-hex-digit string.
std::string hash_file(const std::string& path);

// ---------------------------------------------------------------------------
// Small string helpers
// ---------------------------------------------------------------------------

std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::vector<std::string> split_ws(std::string_view line);

/// Shortest round-trippable decimal form of a double; used anywhere a value
/// must re-read bit-exactly (metrics logs, summaries).
std::string format_double(double v);

/// Reads a whole file; throws Io with the path on failure.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace relm
