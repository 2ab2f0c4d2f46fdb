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

#include <doctest.h>

#include <thread>
#include <unistd.h>

#include "system_support.hpp"

using namespace assured;
using namespace assured::testing;
using namespace assured::transport;

TEST_CASE("messages survive a pipe in order, including empty ones") {
  int fds[2];
  REQUIRE(::pipe(fds) == 0);
  std::vector<Bytes> sent = {Bytes{}, Bytes{1, 2, 3}, Bytes(70000, 0x5a)};
  std::thread writer([&] {
    for (const auto& m : sent) write_message(fds[1], m);
    ::close(fds[1]);
  });
  for (const auto& m : sent) CHECK(read_message(fds[0]) == m);
  CHECK_FALSE(read_message(fds[0]));
  writer.join();
  ::close(fds[0]);
}

TEST_CASE("a truncated message is an error, not a short read") {
  int fds[2];
  REQUIRE(::pipe(fds) == 0);
  std::uint8_t partial[] = {0, 0, 0, 9, 1, 2};
  REQUIRE(::write(fds[1], partial, sizeof(partial)) == sizeof(partial));
  ::close(fds[1]);
  CHECK_THROWS_AS(read_message(fds[0]), std::runtime_error);
  ::close(fds[0]);
}

TEST_CASE("the device endpoint answers garbage with protocol errors") {
  World w;
  auto rng = crypto::Drbg::from_seed(8, "garbage");
  for (int i = 0; i < 2000; ++i) {
    Bytes req(1 + rng.next_u64() % 200);
    rng.fill(req);
    if (req[0] == static_cast<std::uint8_t>(protocol::Request::Shutdown) ||
        req[0] == static_cast<std::uint8_t>(protocol::Request::CorruptFlash) ||
        req[0] == static_cast<std::uint8_t>(protocol::Request::Provision)) {
      req[0] = 0xff;
    }
    Bytes reply;
    REQUIRE_NOTHROW(reply = w.endpoint.handle(req));
    REQUIRE_NOTHROW(protocol::parse_reply(reply));
  }
  CHECK(w.dev().installed_version() == 1);
  CHECK(protocol::to_string(w.dev().boot()) == "Running:1");
  CHECK_FALSE(protocol::parse_reply(w.endpoint.handle({})).ok);
}

TEST_CASE("an unprovisioned endpoint accepts only provisioning") {
  World w;
  DeviceEndpoint blank;
  auto hello = Bytes{static_cast<std::uint8_t>(protocol::Request::Boot)};
  CHECK_FALSE(protocol::parse_reply(blank.handle(hello)).ok);
  Bytes prov{static_cast<std::uint8_t>(protocol::Request::Provision)};
  auto body = encode_provision(w.provisioning(device::InstallMode::DualBank, 1),
                               auth::serialize_envelope(w.factory));
  prov.insert(prov.end(), body.begin(), body.end());
  CHECK(protocol::parse_reply(blank.handle(prov)).ok);
  CHECK(blank.provisioned());
  CHECK(blank.device().installed_version() == 1);

  // A factory image the OEM did not sign is refused.
  DeviceEndpoint other;
  prov.back() ^= 1;
  CHECK_FALSE(protocol::parse_reply(other.handle(prov)).ok);
  CHECK_FALSE(other.provisioned());
}

TEST_CASE("a forked device process behaves like the in-process endpoint") {
  World local;
  World remote_world;
  auto child = ChildProcess::fork_serving([&] {
    return std::make_unique<DeviceEndpoint>(remote_world.endpoint);
  });
  local.publish("fw", local.envelope(2));
  local.sync();

  auto run = [&](protocol::DeviceLink& link) {
    std::vector<std::string> log;
    auto s = local.ctrl.open_channel(kDeviceId, link);
    auto r = local.ctrl.deliver(s, link, local.ctrl.pending("fw"));
    log.push_back(protocol::to_string(r.outcome));
    log.push_back(std::to_string(r.outcome.pk_verifications));
    auto boot = link.exchange(Bytes{static_cast<std::uint8_t>(protocol::Request::Boot)});
    log.push_back(protocol::to_string(protocol::decode_boot_result(protocol::parse_reply(*boot).payload)));
    return log;
  };
  // Same controller seed for both runs, so both see the same requests.
  auto saved = std::filesystem::temp_directory_path() /
               ("assured-fork-" + std::to_string(::getpid()) + ".state");
  local.ctrl.save(saved);
  auto in_process = run(local.link);
  local.ctrl = controller::Controller::load(saved);
  auto cross = run(*child);
  std::filesystem::remove(saved);
  CHECK(in_process == cross);
  CHECK(in_process[0] == "Installed:2");
  CHECK(in_process[1] == "1");
  // The parent's copy of the device never saw the install.
  CHECK(remote_world.dev().installed_version() == 1);
  CHECK(child->stop() == 0);
  CHECK_FALSE(child->exchange(Bytes{1}));
}

TEST_CASE("a remote repository reports the same errors as a local one") {
  World w;
  w.publish("fw", w.envelope(2));
  auto child = ChildProcess::fork_serving([&] { return std::make_unique<RepositoryEndpoint>(w.repo); });
  RemoteRepository remote(*child);
  repo::StateMirror local(w.repo);
  CHECK(remote.encoding() == local.encoding());
  for (auto role : metadata::kAllRoles) CHECK(remote.fetch_metadata(role) == local.fetch_metadata(role));
  CHECK(remote.fetch_envelope("fw") == local.fetch_envelope("fw"));
  CHECK_THROWS_AS(remote.fetch_envelope("nope"), repo::RepoFailure);
  try {
    remote.publish("bad name", Bytes{1});
    FAIL("publish accepted a bad name");
  } catch (const repo::RepoFailure& e) {
    CHECK(e.code() == repo::RepoError::PublishRejected);
  }
  remote.publish("fw3", auth::serialize_envelope(w.envelope(3)));
  remote.advance_clock(4);
  remote.refresh_timestamp();
  remote.set_tamper_policy(repo::parse_tamper_policy("drop"));
  CHECK_THROWS_AS(remote.fetch_envelope("fw3"), repo::RepoFailure);
  remote.set_tamper_policy({});
  CHECK(remote.fetch_envelope("fw3") == auth::serialize_envelope(w.envelope(3)));

  // Controller sync runs unchanged against the remote mirror.
  auto fresh = w.ctrl.sync(remote, 4);
  CHECK(fresh.size() == 2);
  CHECK(w.ctrl.last_seen().timestamp == 4);
  remote.shutdown();
  CHECK(child->stop() == 0);
}

TEST_CASE("unix socket serving") {
  World w;
  auto path = (std::filesystem::temp_directory_path() /
               ("assured-" + std::to_string(::getpid()) + ".sock")).string();
  std::thread server([&] { serve_unix(w.endpoint, path); });
  std::unique_ptr<UnixLink> link;
  for (int i = 0; i < 200 && !link; ++i) {
    try {
      link = std::make_unique<UnixLink>(path);
    } catch (const std::runtime_error&) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }
  REQUIRE(link);
  CHECK(w.ctrl.request_attestation(kDeviceId, *link).verified);
  link->exchange(Bytes{static_cast<std::uint8_t>(protocol::Request::Shutdown)});
  link.reset();
  server.join();
  CHECK(w.endpoint.finished());
}
