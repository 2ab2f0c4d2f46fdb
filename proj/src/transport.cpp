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

#include "assured/transport.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <stdexcept>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

namespace assured::transport {

using protocol::ErrorDomain;
using protocol::Request;

namespace {

constexpr std::uint32_t kMaxMessage = 64u << 20;

template <typename E>
Bytes fail_reply(ErrorDomain domain, E code, const std::string& message) {
  return protocol::error_reply({domain, static_cast<std::uint8_t>(code), message});
}

Bytes protocol_error(const std::string& message) {
  return protocol::error_reply({ErrorDomain::Protocol, 0, message});
}

Bytes rest(ByteReader& r) {
  auto v = r.raw(r.remaining());
  return Bytes(v.begin(), v.end());
}

void flip(Bytes& b, std::uint64_t bit) {
  if (b.empty()) return;
  bit %= b.size() * 8;
  b[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
}

}  // namespace

Bytes encode_provision(const device::Provisioning& p, ByteView factory_envelope) {
  ByteWriter w;
  w.u64(p.identity.model).u64(p.identity.id).raw(p.oem_public.bytes).raw(p.k_att.bytes);
  w.u8(static_cast<std::uint8_t>(p.mode)).u64(p.rng_seed);
  if (p.tuf_anchor) {
    auto root = metadata::serialize(*p.tuf_anchor, metadata::Encoding::FixedBinary);
    w.u8(1).u32(static_cast<std::uint32_t>(root.size())).raw(root);
  } else {
    w.u8(0);
  }
  w.raw(factory_envelope);
  return std::move(w).take();
}

Bytes encode_fault(const FlashFault& f) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(f.kind)).u8(f.bank).u64(f.arg);
  return std::move(w).take();
}

Bytes encode_tuf_update(std::uint64_t now, metadata::Encoding encoding,
                        const std::array<Bytes, 4>& blobs, ByteView envelope) {
  ByteWriter w;
  w.u64(now).u8(static_cast<std::uint8_t>(encoding));
  for (const auto& b : blobs) w.u32(static_cast<std::uint32_t>(b.size())).raw(b);
  w.raw(envelope);
  return std::move(w).take();
}

const device::Device& DeviceEndpoint::device() const {
  if (!device_) throw std::logic_error("device not provisioned");
  return *device_;
}

device::Device& DeviceEndpoint::device() {
  if (!device_) throw std::logic_error("device not provisioned");
  return *device_;
}

Bytes DeviceEndpoint::handle(ByteView request) {
  try {
    ByteReader r(request);
    auto type = static_cast<Request>(r.u8());
    if (type == Request::Shutdown) {
      finished_ = true;
      return protocol::ok_reply({});
    }
    if (type == Request::Provision) {
      device::Provisioning p;
      p.identity.model = r.u64();
      p.identity.id = r.u64();
      p.oem_public.bytes = r.fixed<crypto::kPublicKeySize>();
      p.k_att.bytes = r.fixed<crypto::kMacKeySize>();
      auto mode = r.u8();
      if (mode > 1) throw MalformedInput("unknown install mode", r.position() - 1);
      p.mode = static_cast<device::InstallMode>(mode);
      p.rng_seed = r.u64();
      if (r.u8() != 0) p.tuf_anchor = metadata::parse(r.raw(r.u32()), metadata::Encoding::FixedBinary);
      auto image = auth::parse_envelope(rest(r));
      device_ = device::Device::manufacture(p, image);
      return protocol::ok_reply({});
    }
    if (!device_) return protocol_error("device not provisioned");
    auto& d = *device_;

    switch (type) {
      case Request::Hello: {
        auto id = r.u64();
        auto cn = r.fixed<crypto::kNonceSize>();
        r.expect_end();
        try {
          auto dn = d.channel_accept(id, cn);
          return protocol::ok_reply(dn);
        } catch (const device::SessionFailure& e) {
          return fail_reply(ErrorDomain::Session, e.code(), e.what());
        }
      }
      case Request::Confirm: {
        try {
          auto frame = d.confirm_channel({rest(r)});
          return protocol::ok_reply(frame.bytes);
        } catch (const crypto::ChannelFailure& e) {
          return fail_reply(ErrorDomain::Channel, e.code(), e.what());
        } catch (const device::SessionFailure& e) {
          return fail_reply(ErrorDomain::Session, e.code(), e.what());
        }
      }
      case Request::Update: {
        auto frames = protocol::decode_frames(r);
        r.expect_end();
        auto delivery = d.receive_update(frames);
        if (delivery.ack) return protocol::ok_reply(delivery.ack->bytes);
        if (delivery.channel_error) {
          return fail_reply(ErrorDomain::Channel, *delivery.channel_error,
                            crypto::to_string(*delivery.channel_error));
        }
        return fail_reply(ErrorDomain::Session, delivery.outcome.reason,
                          protocol::to_string(delivery.outcome));
      }
      case Request::PlainUpdate:
        return protocol::ok_reply(protocol::encode(d.receive_plaintext(rest(r))));
      case Request::Attest: {
        auto nonce = r.fixed<crypto::kNonceSize>();
        r.expect_end();
        try {
          return protocol::ok_reply(protocol::encode(d.attest(nonce)));
        } catch (const device::AttestFailure& e) {
          return fail_reply(ErrorDomain::Attestation, e.code(), e.what());
        }
      }
      case Request::Boot:
        r.expect_end();
        return protocol::ok_reply(protocol::encode(d.boot()));
      case Request::TufUpdate: {
        auto now = r.u64();
        auto enc = r.u8();
        if (enc > 1) throw MalformedInput("unknown encoding", r.position() - 1);
        std::array<Bytes, 4> blobs;
        for (auto& b : blobs) {
          auto v = r.raw(r.u32());
          b.assign(v.begin(), v.end());
        }
        auto outcome = d.receive_tuf_update(blobs, static_cast<metadata::Encoding>(enc), rest(r), now);
        return protocol::ok_reply(protocol::encode(outcome));
      }
      case Request::CorruptFlash: {
        FlashFault f;
        auto kind = r.u8();
        if (kind > 2) throw MalformedInput("unknown fault", 1);
        f.kind = static_cast<FaultKind>(kind);
        f.bank = r.u8();
        f.arg = r.u64();
        r.expect_end();
        switch (f.kind) {
          case FaultKind::FlipBankBit: {
            auto bank = d.active_bank();
            if (f.bank != 0) bank = bank == device::BankId::A ? device::BankId::B : device::BankId::A;
            device::FaultInjector::flip_bank_bit(d, bank, f.arg);
            break;
          }
          case FaultKind::CorruptNextWrite:
            device::FaultInjector::corrupt_next_write(d);
            break;
          case FaultKind::PowerLossAfter:
            device::FaultInjector::power_loss_after(d, static_cast<int>(f.arg));
            break;
        }
        return protocol::ok_reply({});
      }
      default:
        return protocol_error("unknown request type");
    }
  } catch (const MalformedInput& e) {
    return protocol_error(std::string("malformed request: ") + e.what());
  } catch (const std::invalid_argument& e) {
    return protocol_error(e.what());
  }
}

Bytes RepositoryEndpoint::handle(ByteView request) {
  try {
    ByteReader r(request);
    auto type = static_cast<RepoRequest>(r.u8());
    ByteWriter w;
    switch (type) {
      case RepoRequest::Shutdown:
        finished_ = true;
        break;
      case RepoRequest::Encoding:
        w.u8(static_cast<std::uint8_t>(state_.encoding));
        break;
      case RepoRequest::FetchMetadata: {
        auto role = r.u8();
        if (role < 1 || role > 4) throw MalformedInput("unknown role", 1);
        w.raw(repo::fetch_metadata(state_, static_cast<metadata::RoleKind>(role)));
        break;
      }
      case RepoRequest::FetchEnvelope: {
        auto name = rest(r);
        w.raw(repo::fetch_envelope(state_, std::string(name.begin(), name.end())));
        break;
      }
      case RepoRequest::Publish: {
        auto n = r.raw(r.u8());
        state_ = repo::publish(state_, std::string(n.begin(), n.end()), rest(r));
        break;
      }
      case RepoRequest::Tamper: {
        auto text = rest(r);
        state_ = repo::set_tamper_policy(
            state_, repo::parse_tamper_policy(std::string(text.begin(), text.end())));
        break;
      }
      case RepoRequest::AdvanceClock:
        state_ = repo::advance_clock(state_, r.u64());
        break;
      case RepoRequest::Refresh:
        state_ = repo::refresh_timestamp(state_);
        break;
      default:
        return protocol_error("unknown repository request");
    }
    return protocol::ok_reply(w.bytes());
  } catch (const repo::RepoFailure& e) {
    return fail_reply(ErrorDomain::Repository, e.code(), e.what());
  } catch (const MalformedInput& e) {
    return protocol_error(std::string("malformed request: ") + e.what());
  } catch (const std::invalid_argument& e) {
    return protocol_error(e.what());
  }
}

Bytes RemoteRepository::call(ByteView request) const {
  auto reply_bytes = link_->exchange(request);
  if (!reply_bytes) throw std::runtime_error("repository did not answer");
  auto reply = protocol::parse_reply(*reply_bytes);
  if (reply.ok) return reply.payload;
  if (reply.error.domain == ErrorDomain::Repository) {
    throw repo::RepoFailure(static_cast<repo::RepoError>(reply.error.code), reply.error.message);
  }
  throw std::runtime_error("repository error: " + reply.error.message);
}

metadata::Encoding RemoteRepository::encoding() const {
  auto b = call(Bytes{static_cast<std::uint8_t>(RepoRequest::Encoding)});
  if (b.size() != 1 || b[0] > 1) throw MalformedInput("bad encoding reply", 0);
  return static_cast<metadata::Encoding>(b[0]);
}

Bytes RemoteRepository::fetch_metadata(metadata::RoleKind role) {
  return call(Bytes{static_cast<std::uint8_t>(RepoRequest::FetchMetadata),
                    static_cast<std::uint8_t>(role)});
}

Bytes RemoteRepository::fetch_envelope(const std::string& name) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(RepoRequest::FetchEnvelope)).raw(as_bytes(name));
  return call(w.bytes());
}

void RemoteRepository::publish(const std::string& name, ByteView envelope) {
  if (name.size() > 255) throw std::invalid_argument("target name too long");
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(RepoRequest::Publish)).u8(static_cast<std::uint8_t>(name.size()));
  w.raw(as_bytes(name)).raw(envelope);
  call(w.bytes());
}

void RemoteRepository::set_tamper_policy(const repo::TamperPolicy& policy) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(RepoRequest::Tamper)).raw(as_bytes(repo::to_string(policy)));
  call(w.bytes());
}

void RemoteRepository::advance_clock(std::uint64_t ticks) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(RepoRequest::AdvanceClock)).u64(ticks);
  call(w.bytes());
}

void RemoteRepository::refresh_timestamp() {
  call(Bytes{static_cast<std::uint8_t>(RepoRequest::Refresh)});
}

void RemoteRepository::shutdown() { call(Bytes{static_cast<std::uint8_t>(RepoRequest::Shutdown)}); }

std::optional<Bytes> InterceptLink::exchange(ByteView request) {
  if (request.empty()) return inner_->exchange(request);
  auto type = static_cast<Request>(request[0]);
  last_request_[type] = Bytes(request.begin(), request.end());
  if (drop_ == type) {
    drop_.reset();
    return std::nullopt;
  }

  if (type == Request::Update && frame_tamper_) {
    auto [index, bit] = *frame_tamper_;
    frame_tamper_.reset();
    ByteReader r(request.subspan(1));
    auto frames = protocol::decode_frames(r);
    if (!frames.empty()) flip(frames[std::min(index, frames.size() - 1)].bytes, bit);
    Bytes forged{static_cast<std::uint8_t>(Request::Update)};
    auto body = protocol::encode_frames(frames);
    forged.insert(forged.end(), body.begin(), body.end());
    return inner_->exchange(forged);
  }

  if (type == Request::Attest) {
    if (reply_replay_ && last_attest_reply_) {
      reply_replay_ = false;
      return last_attest_reply_;
    }
    auto reply = inner_->exchange(request);
    if (!reply) return reply;
    last_attest_reply_ = reply;
    if (reply_tamper_ && reply->size() > 1) {
      Bytes report(reply->begin() + 1, reply->end());
      flip(report, *reply_tamper_);
      std::copy(report.begin(), report.end(), reply->begin() + 1);
      reply_tamper_.reset();
    }
    return reply;
  }
  return inner_->exchange(request);
}

void InterceptLink::arm_frame_tamper(std::size_t frame, std::uint64_t bit) {
  frame_tamper_ = {frame, bit};
}
void InterceptLink::arm_drop(Request type) { drop_ = type; }
void InterceptLink::arm_reply_tamper(std::uint64_t bit) { reply_tamper_ = bit; }
void InterceptLink::arm_reply_replay() { reply_replay_ = true; }

std::optional<Bytes> InterceptLink::replay(Request type) {
  auto it = last_request_.find(type);
  if (it == last_request_.end()) return std::nullopt;
  return inner_->exchange(it->second);
}

namespace {

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    auto w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("write failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Returns bytes read; fewer than n only at end-of-stream.
std::size_t read_all(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    auto r = ::read(fd, data + got, n - got);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("read failed: ") + std::strerror(errno));
    }
    if (r == 0) break;
    got += static_cast<std::size_t>(r);
  }
  return got;
}

}  // namespace

void write_message(int fd, ByteView body) {
  if (body.size() > kMaxMessage) throw std::invalid_argument("message too large");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(body.size())).raw(body);
  write_all(fd, w.bytes().data(), w.bytes().size());
}

std::optional<Bytes> read_message(int fd) {
  std::array<std::uint8_t, 4> header{};
  auto got = read_all(fd, header.data(), header.size());
  if (got == 0) return std::nullopt;
  if (got != header.size()) throw std::runtime_error("truncated message header");
  auto len = static_cast<std::uint32_t>(load_be64(Bytes{0, 0, 0, 0, header[0], header[1],
                                                        header[2], header[3]}));
  if (len > kMaxMessage) throw std::runtime_error("message too large");
  Bytes body(len);
  if (read_all(fd, body.data(), len) != len) throw std::runtime_error("truncated message body");
  return body;
}

void serve(Endpoint& endpoint, int in_fd, int out_fd) {
  while (!endpoint.finished()) {
    auto msg = read_message(in_fd);
    if (!msg) return;
    write_message(out_fd, endpoint.handle(*msg));
  }
}

std::unique_ptr<ChildProcess> ChildProcess::fork_serving(
    const std::function<std::unique_ptr<Endpoint>()>& make) {
  std::signal(SIGPIPE, SIG_IGN);
  int down[2];
  int up[2];
  if (::pipe2(down, O_CLOEXEC) != 0 || ::pipe2(up, O_CLOEXEC) != 0) {
    throw std::runtime_error("pipe failed");
  }
  pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    ::close(down[1]);
    ::close(up[0]);
    int status = 0;
    try {
      auto endpoint = make();
      serve(*endpoint, down[0], up[1]);
    } catch (...) {
      status = 1;
    }
    ::_exit(status);
  }
  ::close(down[0]);
  ::close(up[1]);
  return std::unique_ptr<ChildProcess>(new ChildProcess(pid, down[1], up[0]));
}

ChildProcess::~ChildProcess() {
  try {
    stop();
  } catch (...) {
  }
}

std::optional<Bytes> ChildProcess::exchange(ByteView request) {
  if (stopped_) return std::nullopt;
  write_message(to_child_, request);
  return read_message(from_child_);
}

int ChildProcess::stop() {
  if (stopped_) return 0;
  stopped_ = true;
  try {
    write_message(to_child_, Bytes{static_cast<std::uint8_t>(Request::Shutdown)});
    read_message(from_child_);
  } catch (const std::runtime_error&) {
  }
  ::close(to_child_);
  ::close(from_child_);
  int status = 0;
  ::waitpid(pid_, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

namespace {

sockaddr_un unix_address(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) throw std::invalid_argument("socket path too long");
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  return addr;
}

}  // namespace

void serve_unix(Endpoint& endpoint, const std::string& path) {
  std::signal(SIGPIPE, SIG_IGN);
  auto addr = unix_address(path);
  int listener = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listener < 0) throw std::runtime_error("socket failed");
  ::unlink(path.c_str());
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listener, 4) != 0) {
    ::close(listener);
    throw std::runtime_error("cannot listen on " + path + ": " + std::strerror(errno));
  }
  while (!endpoint.finished()) {
    int conn = ::accept(listener, nullptr, nullptr);
    if (conn < 0) {
      if (errno == EINTR) continue;
      break;
    }
    try {
      serve(endpoint, conn, conn);
    } catch (const std::runtime_error&) {
    }
    ::close(conn);
  }
  ::close(listener);
  ::unlink(path.c_str());
}

UnixLink::UnixLink(const std::string& path) {
  std::signal(SIGPIPE, SIG_IGN);
  auto addr = unix_address(path);
  fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw std::runtime_error("socket failed");
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    throw std::runtime_error("cannot connect to " + path + ": " + std::strerror(errno));
  }
}

UnixLink::~UnixLink() { ::close(fd_); }

std::optional<Bytes> UnixLink::exchange(ByteView request) {
  write_message(fd_, request);
  return read_message(fd_);
}

}  // namespace assured::transport
