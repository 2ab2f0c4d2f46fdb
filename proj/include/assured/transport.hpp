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

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <sys/types.h>

#include "assured/device.hpp"
#include "assured/protocol.hpp"
#include "assured/repository.hpp"

// Message endpoints for the device and the repository, and the links that
// carry requests to them: in-process, through an intercepting adversary,
// over a pipe pair to a child process, or over a unix socket.
namespace assured::transport {

using Link = protocol::DeviceLink;

/// Something that answers request messages.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual Bytes handle(ByteView request) = 0;
  /// True once a Shutdown request has been answered.
  bool finished() const noexcept { return finished_; }

 protected:
  bool finished_ = false;
};

// ---- device ---------------------------------------------------------------

/// Physical faults the harness may inject through Request::CorruptFlash.
enum class FaultKind : std::uint8_t { FlipBankBit = 0, CorruptNextWrite = 1, PowerLossAfter = 2 };

struct FlashFault {
  FaultKind kind = FaultKind::FlipBankBit;
  /// FlipBankBit: 0 = active bank, 1 = inactive bank.
  std::uint8_t bank = 0;
  /// FlipBankBit: bit index. PowerLossAfter: write step.
  std::uint64_t arg = 0;
};

Bytes encode_provision(const device::Provisioning& p, ByteView factory_envelope);
Bytes encode_fault(const FlashFault& f);
Bytes encode_tuf_update(std::uint64_t now, metadata::Encoding encoding,
                        const std::array<Bytes, 4>& metadata, ByteView envelope);

/// Dispatches protocol requests to a Device. Before Provision arrives, only
/// Provision and Shutdown are accepted.
class DeviceEndpoint : public Endpoint {
 public:
  DeviceEndpoint() = default;
  explicit DeviceEndpoint(device::Device d) : device_(std::move(d)) {}

  Bytes handle(ByteView request) override;

  bool provisioned() const noexcept { return device_.has_value(); }
  /// Throws std::logic_error before provisioning.
  const device::Device& device() const;
  device::Device& device();

 private:
  std::optional<device::Device> device_;
};

// ---- repository -----------------------------------------------------------

enum class RepoRequest : std::uint8_t {
  Encoding = 0x20,
  FetchMetadata = 0x21,  // role(1)
  FetchEnvelope = 0x22,  // name
  Publish = 0x23,        // name_len(1) || name || envelope
  Tamper = 0x24,         // policy text
  AdvanceClock = 0x25,   // ticks(8)
  Refresh = 0x26,
  Shutdown = 0x12,
};

/// Serves a repository's mirror reads and its publisher-side controls.
class RepositoryEndpoint : public Endpoint {
 public:
  explicit RepositoryEndpoint(repo::RepositoryState state) : state_(std::move(state)) {}
  Bytes handle(ByteView request) override;
  const repo::RepositoryState& state() const noexcept { return state_; }

 private:
  repo::RepositoryState state_;
};

/// Client for a RepositoryEndpoint. Errors come back as the exceptions the
/// in-process functions throw.
class RemoteRepository : public repo::MetadataSource {
 public:
  explicit RemoteRepository(Link& link) : link_(&link) {}

  metadata::Encoding encoding() const override;
  Bytes fetch_metadata(metadata::RoleKind role) override;
  Bytes fetch_envelope(const std::string& name) override;

  void publish(const std::string& name, ByteView envelope);
  void set_tamper_policy(const repo::TamperPolicy& policy);
  void advance_clock(std::uint64_t ticks);
  void refresh_timestamp();
  void shutdown();

 private:
  Bytes call(ByteView request) const;
  Link* link_;
};

// ---- links ----------------------------------------------------------------

class LocalLink : public Link {
 public:
  explicit LocalLink(Endpoint& endpoint) : endpoint_(&endpoint) {}
  std::optional<Bytes> exchange(ByteView request) override {
    return endpoint_->handle(request);
  }

 private:
  Endpoint* endpoint_;
};

/// The local network adversary: sits between Controller and device and can
/// flip frame bits, replay recorded requests, forge replies, or drop traffic.
/// Every arm_* call affects only the next matching request.
class InterceptLink : public Link {
 public:
  explicit InterceptLink(Link& inner) : inner_(&inner) {}

  std::optional<Bytes> exchange(ByteView request) override;

  /// Flip `bit` of frame `frame` in the next Update request.
  void arm_frame_tamper(std::size_t frame, std::uint64_t bit);
  /// The next request of this type never reaches the device.
  void arm_drop(protocol::Request type);
  /// Flip `bit` of the next Attest reply's report.
  void arm_reply_tamper(std::uint64_t bit);
  /// Answer the next Attest request with the last recorded Attest reply.
  void arm_reply_replay();

  /// Re-sends the last request of this type, unchanged. Empty if none was seen.
  std::optional<Bytes> replay(protocol::Request type);

 private:
  Link* inner_;
  std::optional<std::pair<std::size_t, std::uint64_t>> frame_tamper_;
  std::optional<protocol::Request> drop_;
  std::optional<std::uint64_t> reply_tamper_;
  bool reply_replay_ = false;
  std::map<protocol::Request, Bytes> last_request_;
  std::optional<Bytes> last_attest_reply_;
};

/// Length-prefixed messages on file descriptors: length(4, BE) || body.
void write_message(int fd, ByteView body);
/// Empty on clean end-of-stream. Throws std::runtime_error on short reads.
std::optional<Bytes> read_message(int fd);

/// Answers messages from `in_fd` on `out_fd` until Shutdown or end-of-stream.
void serve(Endpoint& endpoint, int in_fd, int out_fd);

/// A child process serving an Endpoint over a pipe pair.
class ChildProcess : public Link {
 public:
  /// Forks; the child runs serve(*make(), ...) and exits.
  static std::unique_ptr<ChildProcess> fork_serving(
      const std::function<std::unique_ptr<Endpoint>()>& make);

  ~ChildProcess() override;
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  std::optional<Bytes> exchange(ByteView request) override;
  /// Sends Shutdown if still running, then reaps the child. Returns its
  /// exit status.
  int stop();

 private:
  ChildProcess(pid_t pid, int to_child, int from_child)
      : pid_(pid), to_child_(to_child), from_child_(from_child) {}
  pid_t pid_;
  int to_child_;
  int from_child_;
  bool stopped_ = false;
};

/// Serves one connection at a time on a unix socket at `path` until Shutdown.
void serve_unix(Endpoint& endpoint, const std::string& path);

class UnixLink : public Link {
 public:
  explicit UnixLink(const std::string& path);
  ~UnixLink() override;
  UnixLink(const UnixLink&) = delete;
  UnixLink& operator=(const UnixLink&) = delete;
  std::optional<Bytes> exchange(ByteView request) override;

 private:
  int fd_;
};

}  // namespace assured::transport
