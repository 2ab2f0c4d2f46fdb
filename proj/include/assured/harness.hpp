// Copyright 2026 The Assured Update Authors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not
// use this file except in compliance with the License. You may obtain a copy of
// the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations under
// the License.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "assured/metadata.hpp"

// Scenario scripts, benchmark report and adversary matrix. A scenario is a
// line-oriented script; each line is a verb followed by key=value arguments,
// and any step may carry expect=<observation>. Lines starting with '#' and
// blank lines are ignored.
//
//   seed 42
//   enroll device=7 model=100
//   issue name=fw-2 version=2 model=100
//   publish name=fw-2
//   sync expect=Synced:1
//   deliver device=7 name=fw-2 expect=Installed:2
//   attest device=7 expect=Verified
namespace assured::harness {

struct Step {
  std::size_t line = 0;
  std::string verb;
  /// Positional words after the verb (as in "seed 42" or "mode single").
  std::vector<std::string> words;
  std::map<std::string, std::string> args;
  std::optional<std::string> expect;
};

struct Scenario {
  std::string name;
  std::vector<Step> steps;
};

/// A script that cannot run: unknown verb, missing argument, or a reference
/// to something no earlier step created. `step()` is 1-based.
class ScriptError : public std::runtime_error {
 public:
  ScriptError(std::size_t step, std::size_t line, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + " (line " + std::to_string(line) +
                           "): " + what),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Throws ScriptError on lexical problems (bad key=value syntax).
Scenario parse_scenario(std::string_view text, std::string name = "scenario");
Scenario load_scenario(const std::string& path);

enum class RunMode { InProcess, MultiProcess };

struct StepResult {
  std::size_t index = 0;
  std::string verb;
  std::string observed;
  std::optional<std::string> expected;
  bool passed = false;
};

struct Transcript {
  std::vector<std::string> lines;
  std::vector<StepResult> steps;

  bool passed() const;
  std::string text() const;
};

/// Runs every step in order. The seed comes from `seed` if given, else from
/// a leading "seed N" step, else 0. Transcripts are byte-identical for the
/// same scenario and seed in either mode. Throws ScriptError.
Transcript run_scenario(const Scenario& scenario, std::optional<std::uint64_t> seed = std::nullopt,
                        RunMode mode = RunMode::InProcess);

// ---- benchmark ------------------------------------------------------------

enum class BenchMode { Assured, TufOnDevice };
std::string to_string(BenchMode m);

/// Per-frame channel bytes that are not payload, plus the amortized share
/// of the handshake. The handshake share is a modeled constant.
inline constexpr std::size_t kModeledHandshakeShare = 8;

struct RoleSizes {
  metadata::RoleKind role;
  std::size_t json = 0;
  std::size_t binary = 0;
};

struct BenchReport {
  BenchMode mode = BenchMode::Assured;
  std::uint32_t device_pk_verifications = 0;
  std::uint64_t controller_pk_verifications = 0;
  /// Explicit authorization: the encoded token.
  std::size_t explicit_bytes = 0;
  /// Measured frame overhead (sequence, length, tag) for one frame.
  std::size_t frame_overhead_bytes = 0;
  /// frame_overhead_bytes + kModeledHandshakeShare.
  std::size_t implicit_bytes = 0;
  /// Authorization metadata the device receives per envelope: token plus
  /// implicit share (Assured), or the full metadata set (TufOnDevice).
  std::size_t device_metadata_bytes = 0;
  std::size_t json_set_bytes = 0;
  std::size_t binary_set_bytes = 0;
  std::size_t envelope_header_bytes = 0;
  std::vector<RoleSizes> roles;
  /// Wall time of the device install, informational only.
  double device_install_ms = 0;
};

/// One-target repository with thresholds (2,2,1,1), one end-to-end install.
BenchReport run_bench(BenchMode mode, std::uint64_t seed = 0);
std::string format_table(const std::vector<BenchReport>& reports);
/// One JSON object per line; timings are omitted so records are reproducible.
std::string format_records(const std::vector<BenchReport>& reports);

// ---- adversary matrix -----------------------------------------------------

struct AdversaryRow {
  std::string attack;
  std::string expected_layer;
  std::string observed;
  bool detected = false;
};

std::vector<AdversaryRow> run_adversary_suite(std::uint64_t seed = 0,
                                              RunMode mode = RunMode::InProcess);
std::string format_matrix(const std::vector<AdversaryRow>& rows);

}  // namespace assured::harness
